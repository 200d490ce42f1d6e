// SPDX-License-Identifier: Apache-2.0
#include "virl/prompts.hpp"

#include "prompts_data.hpp"
#include "virl/error.hpp"

namespace virl {

std::string_view prompt_template_text(sim::PromptTemplate t) {
    return t == sim::PromptTemplate::clear ? prompts_data::kClear : prompts_data::kAmbiguous;
}

std::string_view prompt_template_name(sim::PromptTemplate t) {
    return t == sim::PromptTemplate::clear ? "clear" : "ambiguous";
}

sim::PromptTemplate prompt_template_from_name(std::string_view name) {
    if (name == "clear") return sim::PromptTemplate::clear;
    if (name == "ambiguous") return sim::PromptTemplate::ambiguous;
    throw Error("bad-prompt-template", "unknown prompt template '" + std::string(name) + "' (clear|ambiguous)");
}

std::string render_prompt(sim::PromptTemplate t, const Task& task) {
    std::string choices;
    for (std::size_t i = 0; i < task.choices.size(); ++i) {
        if (i) choices += '\n';
        choices += static_cast<char>('A' + i);
        choices += ". ";
        choices += task.choices[i];
    }
    std::string out(prompt_template_text(t));
    auto substitute = [&](std::string_view key, const std::string& value) {
        for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
            out.replace(pos, key.size(), value);
    };
    substitute("{question}", task.question);
    substitute("{choices}", choices);
    return out;
}

}  // namespace virl
