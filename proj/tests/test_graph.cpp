#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "tfm/errors.hpp"
#include "tfm/event_io.hpp"
#include "tfm/graph.hpp"
#include "tfm/util.hpp"

using namespace tfm;
using namespace tfm::graph;

namespace {

// Brute-force neighbor oracle over the snapshot's edge list: filter, sort by
// recency, dedupe by neighbor id, truncate.
std::vector<Neighbor> neighbors_oracle(const Snapshot& g, NodeId v, int K) {
  std::vector<Neighbor> all;
  for (const TimedEdge& e : g.edges) {
    if (e.u != v && e.v != v) continue;
    if (!g.alive(e.u) || !g.alive(e.v)) continue;
    all.push_back(Neighbor{e.u == v ? e.v : e.u, e.rel, e.u == v, e.t, e.ordinal});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.t != b.t) return a.t > b.t;
    return a.ordinal > b.ordinal;
  });
  std::vector<Neighbor> out;
  for (const Neighbor& n : all) {
    if (int(out.size()) >= K) break;
    bool seen = false;
    for (const Neighbor& o : out) seen = seen || o.other == n.other;
    if (!seen) out.push_back(n);
  }
  return out;
}

bool same_neighbor(const Neighbor& a, const Neighbor& b) {
  return a.other == b.other && a.rel == b.rel && a.outgoing == b.outgoing &&
         a.t == b.t && a.ordinal == b.ordinal;
}

bool same_snapshot(const Snapshot& a, const Snapshot& b) {
  if (a.step != b.step) return false;
  if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size())
    return false;
  auto ia = a.nodes.begin();
  auto ib = b.nodes.begin();
  for (; ia != a.nodes.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (ia->second.kind != ib->second.kind) return false;
    if (ia->second.state != ib->second.state) return false;
  }
  for (std::size_t i = 0; i < a.edges.size(); ++i) {
    const auto& ea = a.edges[i];
    const auto& eb = b.edges[i];
    if (ea.t != eb.t || ea.ordinal != eb.ordinal || ea.rel != eb.rel ||
        ea.u != eb.u || ea.v != eb.v)
      return false;
  }
  return a.used_ids == b.used_ids;
}

// Random but always valid log: nodes come and go, edges and state updates
// only touch live nodes, no self edges.
EventLog random_log(std::uint64_t seed, int steps, int max_nodes) {
  Rng rng(seed);
  EventLog log;
  std::vector<NodeId> alive;
  NodeId next_id = 0;
  for (int n = 0; n < steps; ++n) {
    double t = double(n);
    int ord = 0;
    int n_events = int(rng.uniform_int(6));
    for (int k = 0; k < n_events; ++k) {
      double r = rng.uniform();
      if (r < 0.3 || alive.size() < 2) {
        if (int(alive.size()) >= max_nodes) continue;
        NodeAdd a;
        a.t = t;
        a.ordinal = ord++;
        a.node = next_id++;
        a.kind = NodeKind(rng.uniform_int(4));
        a.s = {rng.uniform(), rng.uniform(-1, 1), rng.uniform(0, 10)};
        alive.push_back(a.node);
        log.events.push_back(a);
      } else if (r < 0.45 && alive.size() > 2) {
        std::size_t idx = rng.uniform_int(alive.size());
        NodeRemove rm;
        rm.t = t;
        rm.ordinal = ord++;
        rm.node = alive[idx];
        alive.erase(alive.begin() + idx);
        log.events.push_back(rm);
      } else if (r < 0.75) {
        EdgeAdd e;
        e.t = t;
        e.ordinal = ord++;
        e.rel = RelKind(rng.uniform_int(5));
        std::size_t iu = rng.uniform_int(alive.size());
        std::size_t iv = rng.uniform_int(alive.size() - 1);
        if (iv >= iu) ++iv;
        e.u = alive[iu];
        e.v = alive[iv];
        log.events.push_back(e);
      } else {
        StateUpdate s;
        s.t = t;
        s.ordinal = ord++;
        s.node = alive[rng.uniform_int(alive.size())];
        s.s = {rng.uniform(), rng.uniform(-1, 1), rng.uniform(0, 10)};
        log.events.push_back(s);
      }
    }
  }
  return log;
}

} // namespace

TEST_CASE("step_for_time maps boundary and interior times") {
  CHECK(step_for_time(0.0, 1.0) == 0);
  CHECK(step_for_time(12.0, 1.0) == 12);
  CHECK(step_for_time(11.2, 1.0) == 12);
  CHECK(step_for_time(11.0 + 1e-12, 1.0) == 11);
  CHECK(step_for_time(6.0, 0.5) == 12);
  CHECK(step_for_time(5.75, 0.5) == 12);
}

TEST_CASE("state constructors follow the slot layout") {
  State v = make_vehicle_state(8.2, 0.4, 120.0);
  CHECK(v.size() == std::size_t(kStateDim));
  CHECK(v[0] == 8.2);
  CHECK(v[2] == 120.0);
  CHECK(v[3] == 1.0);
  State l = make_light_state(true, 12.0);
  CHECK(l[0] == 1.0);
  CHECK(l[1] == 0.0);
  CHECK(l[2] == 12.0);
  CHECK(l[6] == 1.0);
}

TEST_CASE("empty batches advance the step counter") {
  Snapshot g(1.0);
  CHECK(g.step == -1);
  apply_events_inplace(g, {});
  CHECK(g.step == 0);
  CHECK(g.now() == 0.0);
  apply_events_inplace(g, {});
  apply_events_inplace(g, {});
  CHECK(g.step == 2);
}

TEST_CASE("pure apply_events leaves the input untouched") {
  Snapshot g(1.0);
  apply_events_inplace(g, {NodeAdd{0.0, 0, 1, NodeKind::Vehicle, {1.0}}});
  Snapshot before = g;
  Snapshot next = apply_events(g, {StateUpdate{1.0, 0, 1, {2.0}}});
  CHECK(same_snapshot(g, before));
  CHECK(next.step == 1);
  CHECK(next.node(1).state == State{2.0});
  CHECK(g.node(1).state == State{1.0});
}

TEST_CASE("replaying a log event by event matches a single call") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 40ull, 500ull}) {
    EventLog log = random_log(seed, 30, 12);
    CHECK(validate_log(log).empty());

    Snapshot whole(1.0);
    for (const StepBatch& b : split_by_step(log)) apply_events_inplace(whole, b.events);

    Snapshot one_by_one(1.0);
    for (const Event& e : log.events) apply_events_inplace(one_by_one, {e});

    CHECK(same_snapshot(whole, one_by_one));
    CHECK(same_snapshot(whole, replay(log)));
  }
}

TEST_CASE("edges expire once they leave the recency window") {
  Snapshot g(1.0, 3);
  apply_events_inplace(g, {NodeAdd{0.0, 0, 1, NodeKind::Vehicle, {1.0}},
                           NodeAdd{0.0, 1, 2, NodeKind::Vehicle, {1.0}},
                           EdgeAdd{0.0, 2, RelKind::Follows, 1, 2}});
  CHECK(g.edges.size() == 1);
  apply_events_inplace(g, {EdgeAdd{1.0, 0, RelKind::Follows, 2, 1}});
  CHECK(g.edges.size() == 2);
  apply_events_inplace(g, {});
  apply_events_inplace(g, {});
  // now at step 3: the t=0 edge (step 0) is outside (0, 3], the t=1 survives
  CHECK(g.step == 3);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].t == 1.0);
  apply_events_inplace(g, {});
  CHECK(g.edges.empty());
}

TEST_CASE("replay up to a step stops early and pads empty steps") {
  EventLog log = random_log(7, 20, 10);
  Snapshot g5 = replay(log, 5);
  CHECK(g5.step == 5);
  for (const TimedEdge& e : g5.edges) CHECK(e.t <= 5.0);
  Snapshot far = replay(log, 40);
  CHECK(far.step == 40);
  CHECK(far.edges.empty()); // all edges are older than the window by then
}

TEST_CASE("node removal drops incident edges and bans id reuse") {
  Snapshot g(1.0);
  std::vector<Event> ev;
  ev.push_back(NodeAdd{0.0, 0, 1, NodeKind::Vehicle, {1.0}});
  ev.push_back(NodeAdd{0.0, 1, 2, NodeKind::Vehicle, {2.0}});
  ev.push_back(EdgeAdd{0.0, 2, RelKind::Follows, 1, 2});
  apply_events_inplace(g, ev);
  CHECK(g.edges.size() == 1);

  apply_events_inplace(g, {NodeRemove{1.0, 0, 2}});
  CHECK(g.edges.empty());
  CHECK(!g.alive(2));
  CHECK(g.used_ids.count(2) == 1);

  std::vector<Event> reuse{NodeAdd{2.0, 0, 2, NodeKind::Vehicle, {0.0}}};
  CHECK_THROWS_AS(apply_events_inplace(g, reuse), Error);
}

TEST_CASE("referential and structural violations are rejected") {
  Snapshot g(1.0);
  apply_events_inplace(g, {NodeAdd{0.0, 0, 1, NodeKind::Vehicle, {1.0}},
                           NodeAdd{0.0, 1, 2, NodeKind::Vehicle, {1.0}}});

  std::vector<Event> dead_edge{EdgeAdd{1.0, 0, RelKind::Follows, 1, 99}};
  CHECK_THROWS_AS(apply_events_inplace(g, dead_edge), Error);

  std::vector<Event> self_edge{EdgeAdd{1.0, 0, RelKind::Follows, 1, 1}};
  CHECK_THROWS_AS(apply_events_inplace(g, self_edge), Error);

  std::vector<Event> bad_state{StateUpdate{1.0, 0, 99, {1.0}}};
  CHECK_THROWS_AS(apply_events_inplace(g, bad_state), Error);

  std::vector<Event> back_in_time{StateUpdate{-5.0, 0, 1, {1.0}}};
  CHECK_THROWS_AS(apply_events_inplace(g, back_in_time), Error);
}

TEST_CASE("snapshot temporal neighbors match the brute-force oracle") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    EventLog log = random_log(seed, 40, 15);
    for (std::int64_t upto : {10, 25, 39}) {
      Snapshot g = replay(log, upto);
      for (int K : {1, 3, 20}) {
        auto lists = neighbor_lists(g, K);
        for (const auto& [id, rec] : g.nodes) {
          auto fast = temporal_neighbors(g, id, K);
          auto slow = neighbors_oracle(g, id, K);
          REQUIRE(fast.size() == slow.size());
          for (std::size_t i = 0; i < fast.size(); ++i)
            CHECK(same_neighbor(fast[i], slow[i]));
          auto& ls = lists[id];
          REQUIRE(ls.size() == slow.size());
          for (std::size_t i = 0; i < ls.size(); ++i)
            CHECK(same_neighbor(ls[i], slow[i]));
        }
      }
    }
  }
}

TEST_CASE("repeat interactions collapse to the latest edge per neighbor") {
  Snapshot g(1.0);
  apply_events_inplace(g, {NodeAdd{0.0, 0, 1, NodeKind::Vehicle, {1.0}},
                           NodeAdd{0.0, 1, 2, NodeKind::Vehicle, {1.0}},
                           NodeAdd{0.0, 2, 3, NodeKind::Lane, {1.0}},
                           EdgeAdd{0.0, 3, RelKind::Follows, 1, 2}});
  apply_events_inplace(g, {EdgeAdd{1.0, 0, RelKind::Follows, 1, 2},
                           EdgeAdd{1.0, 1, RelKind::OnLane, 1, 3}});
  auto n = temporal_neighbors(g, 1, 10);
  REQUIRE(n.size() == 2);
  CHECK(n[0].other == 3);
  CHECK(n[1].other == 2);
  CHECK(n[1].t == 1.0); // latest interaction, not the t=0 one
  CHECK(n[1].ordinal == 0);
}

TEST_CASE("log-wide temporal neighbors agree with an unwindowed snapshot") {
  for (std::uint64_t seed : {21ull, 22ull}) {
    EventLog log = random_log(seed, 30, 12);
    for (double t_n : {10.0, 20.0, 29.0}) {
      Snapshot g = replay(log, std::int64_t(t_n), 1 << 20);
      for (const auto& [id, rec] : g.nodes) {
        auto from_log = temporal_neighbors(log, id, t_n, 5);
        auto from_snap = temporal_neighbors(g, id, 5);
        REQUIRE(from_log.size() == from_snap.size());
        for (std::size_t i = 0; i < from_log.size(); ++i)
          CHECK(same_neighbor(from_log[i], from_snap[i]));
      }
    }
    CHECK_THROWS_AS(temporal_neighbors(log, 9999, 10.0, 5), Error);
  }
}

TEST_CASE("jsonl round trip is byte identical") {
  EventLog log = random_log(99, 25, 10);
  std::ostringstream first;
  write_events(first, log.events);

  EventLog back;
  std::istringstream in(first.str());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) back.events.push_back(event_from_json_line(line, ++no));

  std::ostringstream second;
  write_events(second, back.events);
  CHECK(first.str() == second.str());
  CHECK(same_snapshot(replay(log), replay(back)));
}

TEST_CASE("jsonl lines parse into the expected events") {
  Event e = event_from_json_line(
      R"({"t":12.0,"i":3,"ev":"edge","rel":"follows","u":17,"v":12})", 1);
  const auto& edge = std::get<EdgeAdd>(e);
  CHECK(edge.t == 12.0);
  CHECK(edge.ordinal == 3);
  CHECK(edge.rel == RelKind::Follows);
  CHECK(edge.u == 17);
  CHECK(edge.v == 12);

  Event s = event_from_json_line(
      R"({"t":12.0,"i":4,"ev":"state","node":17,"s":[8.2,0.4]})", 2);
  const auto& st = std::get<StateUpdate>(s);
  CHECK(st.node == 17);
  CHECK(st.s == State{8.2, 0.4});

  Event a = event_from_json_line(
      R"({"t":0.0,"i":0,"ev":"node_add","node":17,"kind":"vehicle","s":[0.0,1.5]})", 3);
  CHECK(std::get<NodeAdd>(a).kind == NodeKind::Vehicle);

  Event r = event_from_json_line(R"({"t":40.0,"i":0,"ev":"node_remove","node":17})", 4);
  CHECK(std::get<NodeRemove>(r).node == 17);
}

TEST_CASE("malformed jsonl lines are rejected") {
  auto bad = [](const std::string& line) {
    CHECK_THROWS_AS(event_from_json_line(line, 1), Error);
  };
  bad("not json");
  bad(R"([1,2,3])");
  bad(R"({"t":1.0,"i":0})");
  bad(R"({"t":1.0,"i":0,"ev":"warp","node":1})");
  bad(R"({"t":1.0,"i":0,"ev":"node_remove"})");
  bad(R"({"t":1.0,"i":0,"ev":"node_remove","node":1,"extra":true})");
  bad(R"({"t":1.0,"i":0,"ev":"node_remove","node":-3})");
  bad(R"({"t":1.0,"i":0,"ev":"node_add","node":1,"kind":"spaceship","s":[1.0]})");
  bad(R"({"t":1.0,"i":0,"ev":"edge","rel":"orbits","u":1,"v":2})");
  bad(R"({"t":1.0,"i":0,"ev":"state","node":1,"s":["x"]})");
}

TEST_CASE("validate_log reports violations with their indices") {
  auto first_violation = [](std::vector<Event> ev) {
    EventLog log{std::move(ev), 1.0};
    auto report = validate_log(log);
    REQUIRE(!report.empty());
    return report.front().index;
  };

  // time going backwards at index 1
  CHECK(first_violation({NodeAdd{1.0, 0, 1, NodeKind::Vehicle, {1.0}},
                         NodeAdd{0.5, 0, 2, NodeKind::Vehicle, {1.0}}}) == 1);
  // ordinal not increasing within a timestamp
  CHECK(first_violation({NodeAdd{1.0, 0, 1, NodeKind::Vehicle, {1.0}},
                         NodeAdd{1.0, 0, 2, NodeKind::Vehicle, {1.0}}}) == 1);
  // first ordinal at a new time must be zero
  CHECK(first_violation({NodeAdd{1.0, 1, 1, NodeKind::Vehicle, {1.0}}}) == 0);
  // state dimension mismatch
  CHECK(first_violation({NodeAdd{1.0, 0, 1, NodeKind::Vehicle, {1.0}},
                         StateUpdate{2.0, 0, 1, {1.0, 2.0}}}) == 1);
  // edge references unknown node
  CHECK(first_violation({NodeAdd{1.0, 0, 1, NodeKind::Vehicle, {1.0}},
                         EdgeAdd{2.0, 0, RelKind::Follows, 1, 7}}) == 1);

  // several independent violations are all collected
  EventLog multi;
  multi.events = {NodeAdd{0.0, 0, 1, NodeKind::Vehicle, {1.0}},
                  EdgeAdd{1.0, 0, RelKind::Follows, 1, 7},
                  StateUpdate{2.0, 0, 9, {1.0}},
                  StateUpdate{3.0, 0, 1, {4.0}}};
  auto report = validate_log(multi);
  REQUIRE(report.size() == 2);
  CHECK(report[0].index == 1);
  CHECK(report[1].index == 2);

  EventLog ok;
  ok.events = {NodeAdd{0.0, 0, 1, NodeKind::Vehicle, {1.0}},
               NodeAdd{0.0, 1, 2, NodeKind::Vehicle, {2.0}},
               EdgeAdd{1.0, 0, RelKind::Follows, 1, 2},
               StateUpdate{1.0, 1, 1, {3.0}},
               NodeRemove{2.0, 0, 1}};
  CHECK(validate_log(ok).empty());
  CHECK(validate_log(EventLog{}).empty());
}
