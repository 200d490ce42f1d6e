// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "virl/sim.hpp"
#include "virl/task.hpp"

namespace virl {

/// Raw template text with {question} and {choices} placeholders.
std::string_view prompt_template_text(sim::PromptTemplate t);
std::string_view prompt_template_name(sim::PromptTemplate t);
/// Throws virl::Error("bad-prompt-template") for names other than clear / ambiguous.
sim::PromptTemplate prompt_template_from_name(std::string_view name);

/// Template with the question and lettered choices substituted.
std::string render_prompt(sim::PromptTemplate t, const Task& task);

}  // namespace virl
