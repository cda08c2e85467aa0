#ifndef CTBNIDS_MODEL_IO_HPP
#define CTBNIDS_MODEL_IO_HPP

// Text serialization of CTBN models. Numbers are written in shortest
// round-trip form, so save -> load -> save is byte-identical.
//
//   format ctbn-model 1
//   meta <key> <value...>
//   variable <name> <cardinality> [toggle]
//   edge <parent> <child>          (per child, in parent order)
//   initial <name> <p_0> ... <p_{n-1}>
//   cim <name> [<parent>=<value> ...]
//   row <q_x0> ... <q_x(n-1)>       (one line per state)
//
// Blank lines and lines starting with '#' are ignored.

#include <string>
#include <string_view>

#include "ctbnids/ctbn.hpp"

namespace ctbnids {

std::string write_model(const ctbn::CtbnModel& model);
// Throws InputError with the offending line number.
ctbn::CtbnModel read_model(std::string_view text, const std::string& source = "<model>");

}  // namespace ctbnids

#endif
