// SPDX-License-Identifier: Apache-2.0
#include "virl/datapipe.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "virl/error.hpp"
#include "virl/io.hpp"

namespace virl::datapipe {

namespace {

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

template <typename T>
T truth_or(const RegionRecord& r, const char* key, T fallback) {
    const auto it = r.truth.find(key);
    if (it == r.truth.end() || it->is_null()) return fallback;
    return it->get<T>();
}

std::string letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

}  // namespace

std::optional<TaskCandidate> CaptionGenerator::generate(const RegionRecord& record) {
    const auto w = words(record.local_caption);
    if (w.size() < 2) return std::nullopt;
    std::string object = w[1];
    for (std::size_t i = 2; i < w.size(); ++i) object += " " + w[i];
    TaskCandidate c;
    c.question = "Which attribute best describes the " + object + " in the image?";
    c.answer = w[0];
    c.rationale = record.region;
    c.bounds = record.bounds;
    c.record_id = record.id;
    c.confidence = truth_or(record, "confidence", 1.0);
    return c;
}

Verdict OracleVerifier::verify(const TaskCandidate& cand, const RegionRecord& image) {
    Verdict v;
    const auto expected = truth_or<std::string>(image, "answer", cand.answer);
    v.answer_ok = truth_or(image, "answer_ok", true) && lower(expected) == lower(cand.answer);
    v.rationale_ok = truth_or(image, "rationale_ok", true) && cand.rationale.contains(image.region);
    return v;
}

BernoulliRollout::BernoulliRollout(std::map<std::string, RegionRecord> records, std::uint64_t backend_seed)
    : records_(std::move(records)), seed_(backend_seed) {}

bool BernoulliRollout::attempt(const TaskCandidate& cand, AttemptMode mode, int index) {
    const auto it = records_.find(cand.record_id);
    if (it == records_.end()) throw Error("missing-image", "no record '" + cand.record_id + "'");
    const bool hint = mode == AttemptMode::with_hint;
    const double p = hint ? truth_or(it->second, "hint_solve_prob", 1.0) : truth_or(it->second, "solve_prob", 0.0);
    Rng rng = make_rng(seed_, "attempt:" + cand.record_id, {hint ? 1u : 0u, static_cast<std::uint64_t>(index)});
    return uniform01(rng) < p;
}

namespace {

std::vector<TaskCandidate> generate_raw(const std::vector<RegionRecord>& records, GeneratorPort& port,
                                        double pad_frac, StageLog* log) {
    std::vector<TaskCandidate> out;
    for (const auto& r : records) {
        if (!r.region.valid() || !r.bounds.valid() || !r.bounds.contains(r.region)) {
            if (log) log->reject(r.id, "generate", "invalid-record");
            continue;
        }
        std::optional<TaskCandidate> c;
        try {
            c = port.generate(r);
        } catch (const std::exception& e) {
            if (log) log->reject(r.id, "generate", std::string("generator-error: ") + e.what());
            continue;
        }
        if (!c) {
            if (log) log->reject(r.id, "generate", "generator-declined");
            continue;
        }
        if (c->question.empty() || !c->rationale.valid()) {
            if (log) log->reject(r.id, "generate", "bad-candidate");
            continue;
        }
        c->record_id = r.id;
        c->bounds = r.bounds;
        c->rationale = geom::pad_box(c->rationale, pad_frac, r.bounds);
        out.push_back(std::move(*c));
    }
    return out;
}

std::vector<TaskCandidate> dedup(std::vector<TaskCandidate> cands, double nms_iou, StageLog* log) {
    std::vector<ScoredBox> scored;
    scored.reserve(cands.size());
    for (const auto& c : cands) scored.push_back({c.rationale, c.confidence});
    auto keep = geom::nms_indices(scored, nms_iou);
    std::sort(keep.begin(), keep.end());
    std::vector<TaskCandidate> out;
    std::size_t k = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        if (k < keep.size() && keep[k] == i) {
            out.push_back(std::move(cands[i]));
            ++k;
        } else if (log) {
            log->reject(cands[i].record_id, "dedup", "nms-duplicate");
        }
    }
    return out;
}

}  // namespace

std::vector<TaskCandidate> generate(const std::vector<RegionRecord>& records, GeneratorPort& port, double pad_frac,
                                    double nms_iou, StageLog* log) {
    return dedup(generate_raw(records, port, pad_frac, log), nms_iou, log);
}

std::vector<TaskCandidate> verify(const std::vector<TaskCandidate>& cands, VerifierPort& port,
                                  const std::map<std::string, RegionRecord>& images, StageLog* log) {
    std::vector<TaskCandidate> out;
    for (const auto& c : cands) {
        const auto it = images.find(c.record_id);
        if (it == images.end()) {
            if (log) log->reject(c.record_id, "verify", "missing-image");
            continue;
        }
        Verdict v;
        try {
            v = port.verify(c, it->second);
        } catch (const std::exception& e) {
            if (log) log->reject(c.record_id, "verify", std::string("verifier-error: ") + e.what());
            continue;
        }
        if (!v.answer_ok) {
            if (log) log->reject(c.record_id, "verify", "answer-inconsistent");
        } else if (!v.rationale_ok) {
            if (log) log->reject(c.record_id, "verify", "rationale-inconsistent");
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::vector<TaskCandidate> filter_reasoning_centric(const std::vector<TaskCandidate>& cands, RolloutPort& port,
                                                    double max_area_frac, int attempts, const KeepProbFn& keep_prob,
                                                    StageLog* log) {
    if (attempts < 1) throw Error("invalid-config", "filter_reasoning_centric: attempts must be >= 1");
    std::vector<TaskCandidate> out;
    for (const auto& c : cands) {
        const double image_area = c.bounds.area();
        if (!(image_area > 0.0)) {
            if (log) log->reject(c.record_id, "filter", "zero-area-image");
            continue;
        }
        if (c.rationale.area() / image_area > max_area_frac) {
            if (log) log->reject(c.record_id, "filter", "rationale-too-large");
            continue;
        }
        int solved = 0;
        try {
            for (int i = 0; i < attempts; ++i) solved += port.attempt(c, AttemptMode::without_grounding, i) ? 1 : 0;
        } catch (const std::exception& e) {
            if (log) log->reject(c.record_id, "filter", std::string("rollout-error: ") + e.what());
            continue;
        }
        const double w = keep_prob(static_cast<double>(solved) / attempts);
        if (!(w > 0.0)) {
            if (log) log->reject(c.record_id, "filter", "solvable-without-grounding");
            continue;
        }
        auto kept = c;
        kept.weight = w;
        out.push_back(std::move(kept));
    }
    return out;
}

Task repackage_mcq(const TaskCandidate& cand, const std::vector<std::string>& pool, Rng& rng, int k_min, int k_max,
                   std::optional<int> forced_k) {
    std::vector<std::string> usable;
    std::set<std::string> seen{lower(cand.answer)};
    for (const auto& d : pool)
        if (!d.empty() && seen.insert(lower(d)).second) usable.push_back(d);
    const int have = static_cast<int>(usable.size());
    if (have < k_min)
        throw Error("insufficient-distractors", "record '" + cand.record_id + "': " + std::to_string(have) +
                                                    " distinct distractors, need " + std::to_string(k_min));
    int k = 0;
    if (forced_k) {
        if (*forced_k < 1 || *forced_k > have)
            throw Error("insufficient-distractors", "record '" + cand.record_id + "': cannot draw " +
                                                        std::to_string(*forced_k) + " distractors");
        k = *forced_k;
    } else {
        k = uniform_int(rng, k_min, std::min(k_max, have));
    }
    std::shuffle(usable.begin(), usable.end(), rng);
    usable.resize(static_cast<std::size_t>(k));
    const auto at = static_cast<std::size_t>(uniform_int(rng, 0, k));
    usable.insert(usable.begin() + static_cast<std::ptrdiff_t>(at), cand.answer);

    Task t;
    t.task_id = cand.record_id;
    t.question = cand.question;
    for (std::size_t i = 0; i < usable.size(); ++i) t.question += "\n" + letter(i) + ". " + usable[i];
    t.choices = std::move(usable);
    t.key = cand.answer;
    t.rationale = cand.rationale;
    t.bounds = cand.bounds;
    t.pad_frac = 0.0;
    t.weight = cand.weight;
    return t;
}

void validate(const PipelineConfig& c) {
    std::vector<std::string> bad;
    if (!(c.pad_frac >= 0.0)) bad.push_back("pad_frac must be >= 0");
    if (!(c.nms_iou >= 0.0 && c.nms_iou <= 1.0)) bad.push_back("nms_iou must be in [0, 1]");
    if (!(c.max_area_frac > 0.0 && c.max_area_frac <= 1.0)) bad.push_back("max_area_frac must be in (0, 1]");
    if (c.attempts < 1) bad.push_back("attempts must be >= 1");
    if (c.k_min < 1) bad.push_back("k_min must be >= 1");
    if (c.k_max < c.k_min) bad.push_back("k_max must be >= k_min");
    if (c.k_max > 25) bad.push_back("k_max must be <= 25 (choice letters run A..Z)");
    if (bad.empty()) return;
    std::string msg = "invalid datapipe config:";
    for (const auto& b : bad) msg += "\n  datapipe." + b;
    throw Error("invalid-config", msg);
}

nlohmann::ordered_json Manifest::to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["stage_counts"] = nlohmann::ordered_json::object();
    for (const auto& [name, n] : stage_counts) j["stage_counts"][name] = n;
    std::map<std::string, std::size_t> by_reason;
    for (const auto& r : rejections) {
        const auto colon = r.reason.find(':');
        ++by_reason[r.stage + "/" + r.reason.substr(0, colon)];
    }
    j["rejection_counts"] = by_reason;
    j["rejections"] = nlohmann::ordered_json::array();
    for (const auto& r : rejections) j["rejections"].push_back({{"id", r.id}, {"stage", r.stage}, {"reason", r.reason}});
    return j;
}

PipelineResult run_pipeline(const std::vector<RegionRecord>& records, GeneratorPort& gen, VerifierPort& ver,
                            RolloutPort& roll, const PipelineConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    PipelineResult res;
    StageLog log;
    std::map<std::string, RegionRecord> images;
    for (const auto& r : records) images.emplace(r.id, r);

    auto generated = generate_raw(records, gen, cfg.pad_frac, &log);
    std::set<std::string> answers;
    for (const auto& c : generated) answers.insert(c.answer);
    for (const auto& c : generated) answers.insert(c.distractors.begin(), c.distractors.end());
    const std::vector<std::string> pool(answers.begin(), answers.end());
    const std::size_t n_generated = generated.size();

    auto deduped = dedup(std::move(generated), cfg.nms_iou, &log);
    auto verified = verify(deduped, ver, images, &log);
    auto filtered = filter_reasoning_centric(verified, roll, cfg.max_area_frac, cfg.attempts, default_keep_prob, &log);

    for (const auto& c : filtered) {
        Rng rng = make_rng(seed, "mcq:" + c.record_id);
        try {
            res.tasks.push_back(repackage_mcq(c, pool, rng, cfg.k_min, cfg.k_max));
        } catch (const Error& e) {
            log.reject(c.record_id, "repackage", e.code());
        }
    }

    res.manifest.seed = seed;
    res.manifest.stage_counts = {{"records", records.size()},     {"generated", n_generated},
                                 {"deduplicated", deduped.size()}, {"verified", verified.size()},
                                 {"filtered", filtered.size()},    {"packaged", res.tasks.size()}};
    res.manifest.rejections = std::move(log.rejections);
    return res;
}

PipelineResult run_synthetic_pipeline(const std::vector<RegionRecord>& records, const PipelineConfig& cfg,
                                      std::uint64_t seed) {
    std::map<std::string, RegionRecord> by_id;
    for (const auto& r : records) by_id.emplace(r.id, r);
    CaptionGenerator gen;
    OracleVerifier ver;
    BernoulliRollout roll(std::move(by_id), cfg.backend_seed);
    return run_pipeline(records, gen, ver, roll, cfg, seed);
}

nlohmann::json record_to_json(const RegionRecord& r) {
    return {{"id", r.id},
            {"global_caption", r.global_caption},
            {"local_caption", r.local_caption},
            {"region", io::box_to_json(r.region)},
            {"bounds", io::box_to_json(r.bounds)},
            {"truth", r.truth}};
}

RegionRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("bad-record", "record must be a JSON object");
    auto text = [&](const char* key, bool required) -> std::string {
        const auto it = j.find(key);
        if (it == j.end()) {
            if (required) throw Error("bad-record", std::string("record is missing '") + key + "'");
            return {};
        }
        if (!it->is_string()) throw Error("bad-record", std::string("'") + key + "' must be a string");
        return it->get<std::string>();
    };
    RegionRecord r;
    r.id = text("id", true);
    r.global_caption = text("global_caption", false);
    r.local_caption = text("local_caption", true);
    for (const char* key : {"region", "bounds"}) {
        if (!j.contains(key)) throw Error("bad-record", "record '" + r.id + "' is missing '" + key + "'");
        try {
            (std::string_view(key) == "region" ? r.region : r.bounds) = io::box_from_json(j[key]);
        } catch (const Error& e) {
            throw Error("bad-record", "record '" + r.id + "' field '" + key + "': " + e.what());
        }
    }
    if (j.contains("truth")) {
        if (!j["truth"].is_object()) throw Error("bad-record", "record '" + r.id + "': 'truth' must be an object");
        r.truth = j["truth"];
    }
    if (!r.region.valid() || !r.bounds.contains(r.region))
        throw Error("bad-record", "record '" + r.id + "': region must be a valid box inside bounds");
    return r;
}

std::vector<RegionRecord> synthetic_records(std::size_t n, std::uint64_t seed) {
    static const std::vector<std::string> attributes = {
        "red", "blue", "green", "yellow", "striped", "wooden", "metal", "glass",
        "white", "black", "orange", "purple", "dotted", "plastic", "leather", "rusty"};
    static const std::vector<std::string> objects = {
        "mug", "bicycle", "umbrella", "street sign", "backpack", "lamp", "kite", "bench",
        "door", "bottle", "clock", "scarf", "chair", "boat", "mailbox", "helmet"};
    const Box bounds{0.0, 0.0, 640.0, 480.0};
    std::vector<RegionRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = make_rng(seed, "record", {i});
        RegionRecord r;
        r.id = "rec" + std::to_string(i);
        r.bounds = bounds;
        const auto& attr = attributes[static_cast<std::size_t>(uniform_int(rng, 0, int(attributes.size()) - 1))];
        const auto& obj = objects[static_cast<std::size_t>(uniform_int(rng, 0, int(objects.size()) - 1))];
        const double w = 20.0 + 140.0 * uniform01(rng);
        const double h = 20.0 + 140.0 * uniform01(rng);
        const double x = (bounds.x2 - w) * uniform01(rng);
        const double y = (bounds.y2 - h) * uniform01(rng);
        r.region = {x, y, x + w, y + h};
        r.global_caption = "a scene containing a " + obj;
        r.local_caption = attr + " " + obj;
        r.truth = {{"answer", attr},
                   {"answer_ok", true},
                   {"rationale_ok", true},
                   {"solve_prob", 0.6 * uniform01(rng)},
                   {"hint_solve_prob", 1.0},
                   {"confidence", 0.5 + 0.5 * uniform01(rng)}};

        const double kind = uniform01(rng);
        if (kind < 0.08 && !out.empty()) {
            // Near-duplicate of an earlier region with the same caption.
            const auto& src = out[static_cast<std::size_t>(uniform_int(rng, 0, int(out.size()) - 1))];
            const double dx = 2.0 * uniform01(rng) - 1.0;
            r.region = geom::clamp_box({src.region.x1 + dx, src.region.y1, src.region.x2 + dx, src.region.y2}, bounds);
            r.local_caption = src.local_caption;
            r.global_caption = src.global_caption;
            r.truth["answer"] = src.truth["answer"];
        } else if (kind < 0.14) {
            const double bw = 400.0 + 200.0 * uniform01(rng), bh = 300.0 + 150.0 * uniform01(rng);
            r.region = {0.0, 0.0, bw, bh};
        } else if (kind < 0.24) {
            r.truth["answer_ok"] = false;
        } else if (kind < 0.30) {
            r.truth["rationale_ok"] = false;
        } else if (kind < 0.40) {
            r.truth["solve_prob"] = 1.0;
        } else if (kind < 0.44) {
            r.local_caption = obj.substr(0, obj.find(' '));
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace virl::datapipe
