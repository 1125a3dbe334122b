#pragma once

#include <iosfwd>
#include <string>

#include "tfm/graph.hpp"

namespace tfm::graph {

// One JSONL line, no trailing newline. Keys come out in a fixed order so
// identical logs serialize to identical bytes.
std::string event_to_json_line(const Event& e);

Event event_from_json_line(const std::string& line, std::size_t line_no);

EventLog read_event_log(const std::string& path);
void write_event_log(const std::string& path, const EventLog& log);
void write_events(std::ostream& out, const std::vector<Event>& events);

} // namespace tfm::graph
