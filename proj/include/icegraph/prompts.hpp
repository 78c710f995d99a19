#pragma once

#include <string>
#include <vector>

#include "icegraph/harness.hpp"

namespace icegraph {

// Instruction header of the FRR-generation prompt for the task.
const std::string& frr_prompt_header(Task task);

// Marker that introduces the FRR block ("Code:" / "Formalized Proof:").
const std::string& frr_code_marker(Task task);

// Marker that introduces the answer block ("A:" / "Proof:").
const std::string& frr_answer_marker(Task task);

}  // namespace icegraph
