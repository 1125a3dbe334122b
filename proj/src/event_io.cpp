#include "tfm/event_io.hpp"

#include <fstream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "tfm/errors.hpp"

namespace tfm::graph {

using nlohmann::ordered_json;

namespace {

ordered_json state_json(const State& s) {
  ordered_json a = ordered_json::array();
  for (double v : s) a.push_back(v);
  return a;
}

State state_from(const ordered_json& a, std::size_t line_no) {
  if (!a.is_array())
    throw bad_data("line " + std::to_string(line_no) + ": \"s\" must be an array");
  State s;
  s.reserve(a.size());
  for (const auto& v : a) {
    if (!v.is_number())
      throw bad_data("line " + std::to_string(line_no) +
                     ": \"s\" must contain only numbers");
    s.push_back(v.get<double>());
  }
  return s;
}

void require_keys(const ordered_json& j, std::set<std::string> allowed,
                  std::size_t line_no) {
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k))
      throw bad_data("line " + std::to_string(line_no) + ": unknown key \"" + k +
                     "\"");
    allowed.erase(k);
  }
  if (!allowed.empty())
    throw bad_data("line " + std::to_string(line_no) + ": missing key \"" +
                   *allowed.begin() + "\"");
}

NodeId node_id_from(const ordered_json& v, std::size_t line_no) {
  if (!v.is_number_unsigned())
    throw bad_data("line " + std::to_string(line_no) +
                   ": node ids must be nonnegative integers");
  return v.get<NodeId>();
}

} // namespace

std::string event_to_json_line(const Event& e) {
  ordered_json j;
  j["t"] = event_time(e);
  j["i"] = event_ordinal(e);
  if (const auto* a = std::get_if<NodeAdd>(&e)) {
    j["ev"] = "node_add";
    j["node"] = a->node;
    j["kind"] = to_string(a->kind);
    j["s"] = state_json(a->s);
  } else if (const auto* r = std::get_if<NodeRemove>(&e)) {
    j["ev"] = "node_remove";
    j["node"] = r->node;
  } else if (const auto* ed = std::get_if<EdgeAdd>(&e)) {
    j["ev"] = "edge";
    j["rel"] = to_string(ed->rel);
    j["u"] = ed->u;
    j["v"] = ed->v;
  } else if (const auto* s = std::get_if<StateUpdate>(&e)) {
    j["ev"] = "state";
    j["node"] = s->node;
    j["s"] = state_json(s->s);
  }
  return j.dump();
}

Event event_from_json_line(const std::string& line, std::size_t line_no) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& ex) {
    throw bad_data("line " + std::to_string(line_no) + ": " + ex.what());
  }
  if (!j.is_object())
    throw bad_data("line " + std::to_string(line_no) + ": expected an object");
  if (!j.contains("t") || !j["t"].is_number())
    throw bad_data("line " + std::to_string(line_no) + ": missing numeric \"t\"");
  if (!j.contains("i") || !j["i"].is_number_integer())
    throw bad_data("line " + std::to_string(line_no) + ": missing integer \"i\"");
  if (!j.contains("ev") || !j["ev"].is_string())
    throw bad_data("line " + std::to_string(line_no) + ": missing \"ev\"");

  double t = j["t"].get<double>();
  int ord = j["i"].get<int>();
  std::string ev = j["ev"].get<std::string>();

  if (ev == "node_add") {
    require_keys(j, {"t", "i", "ev", "node", "kind", "s"}, line_no);
    NodeAdd a;
    a.t = t;
    a.ordinal = ord;
    a.node = node_id_from(j["node"], line_no);
    if (!j["kind"].is_string())
      throw bad_data("line " + std::to_string(line_no) + ": \"kind\" must be a string");
    a.kind = parse_node_kind(j["kind"].get<std::string>());
    a.s = state_from(j["s"], line_no);
    return a;
  }
  if (ev == "node_remove") {
    require_keys(j, {"t", "i", "ev", "node"}, line_no);
    NodeRemove r;
    r.t = t;
    r.ordinal = ord;
    r.node = node_id_from(j["node"], line_no);
    return r;
  }
  if (ev == "edge") {
    require_keys(j, {"t", "i", "ev", "rel", "u", "v"}, line_no);
    EdgeAdd e2;
    e2.t = t;
    e2.ordinal = ord;
    if (!j["rel"].is_string())
      throw bad_data("line " + std::to_string(line_no) + ": \"rel\" must be a string");
    e2.rel = parse_rel_kind(j["rel"].get<std::string>());
    e2.u = node_id_from(j["u"], line_no);
    e2.v = node_id_from(j["v"], line_no);
    return e2;
  }
  if (ev == "state") {
    require_keys(j, {"t", "i", "ev", "node", "s"}, line_no);
    StateUpdate s;
    s.t = t;
    s.ordinal = ord;
    s.node = node_id_from(j["node"], line_no);
    s.s = state_from(j["s"], line_no);
    return s;
  }
  throw bad_data("line " + std::to_string(line_no) + ": unknown event \"" + ev + "\"");
}

EventLog read_event_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open event log: " + path);
  EventLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    log.events.push_back(event_from_json_line(line, line_no));
  }
  return log;
}

void write_event_log(const std::string& path, const EventLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open event log for writing: " + path);
  write_events(out, log.events);
  if (!out) throw io_error("failed writing event log: " + path);
}

void write_events(std::ostream& out, const std::vector<Event>& events) {
  for (const Event& e : events) out << event_to_json_line(e) << '\n';
}

} // namespace tfm::graph
