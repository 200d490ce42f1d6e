// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dataset curation: candidate generation, consistency verification,
// reasoning-centric filtering and multiple-choice repackaging. Every
// model-dependent step goes through a port so tests can plug in stubs.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "virl/geom.hpp"
#include "virl/rng.hpp"
#include "virl/task.hpp"

namespace virl::datapipe {

struct RegionRecord {
    std::string id;
    std::string global_caption;
    std::string local_caption;
    Box region;
    Box bounds;
    /// Hidden ground truth read only by the synthetic backends.
    nlohmann::json truth = nlohmann::json::object();
};

struct TaskCandidate {
    std::string question;
    std::string answer;
    Box rationale;  ///< padded region
    Box bounds;
    std::string record_id;
    double confidence = 1.0;
    double weight = 1.0;
    std::vector<std::string> distractors;
};

struct Verdict {
    bool answer_ok = false;
    bool rationale_ok = false;
};

enum class AttemptMode { with_hint, without_grounding };

class GeneratorPort {
public:
    virtual ~GeneratorPort() = default;
    /// nullopt means the backend declined the record.
    virtual std::optional<TaskCandidate> generate(const RegionRecord& record) = 0;
};

class VerifierPort {
public:
    virtual ~VerifierPort() = default;
    virtual Verdict verify(const TaskCandidate& cand, const RegionRecord& image) = 0;
};

class RolloutPort {
public:
    virtual ~RolloutPort() = default;
    /// One reasoning attempt; `index` distinguishes repeated attempts.
    virtual bool attempt(const TaskCandidate& cand, AttemptMode mode, int index) = 0;
};

/// Rule-based generator over "<attribute> <object...>" local captions.
class CaptionGenerator final : public GeneratorPort {
public:
    std::optional<TaskCandidate> generate(const RegionRecord& record) override;
};

/// Reads truth.answer / truth.answer_ok / truth.rationale_ok of the image record
/// and checks that the padded rationale still contains the source region.
class OracleVerifier final : public VerifierPort {
public:
    Verdict verify(const TaskCandidate& cand, const RegionRecord& image) override;
};

/// Bernoulli attempts with success probability truth.solve_prob (without
/// grounding) or truth.hint_solve_prob (with hint). Streams are keyed by
/// backend seed, record id, mode and attempt index.
class BernoulliRollout final : public RolloutPort {
public:
    BernoulliRollout(std::map<std::string, RegionRecord> records, std::uint64_t backend_seed);
    bool attempt(const TaskCandidate& cand, AttemptMode mode, int index) override;

private:
    std::map<std::string, RegionRecord> records_;
    std::uint64_t seed_;
};

struct Rejection {
    std::string id;
    std::string stage;
    std::string reason;
};

struct StageLog {
    std::vector<Rejection> rejections;
    void reject(std::string id, std::string stage, std::string reason) {
        rejections.push_back({std::move(id), std::move(stage), std::move(reason)});
    }
};

/// Per-record candidates, rationale padded by pad_frac and clamped to bounds,
/// then NMS over rationale boxes by confidence. Survivors keep input order.
std::vector<TaskCandidate> generate(const std::vector<RegionRecord>& records, GeneratorPort& port,
                                    double pad_frac, double nms_iou, StageLog* log = nullptr);

/// Keeps a candidate iff both verdict flags hold.
std::vector<TaskCandidate> verify(const std::vector<TaskCandidate>& cands, VerifierPort& port,
                                  const std::map<std::string, RegionRecord>& images, StageLog* log = nullptr);

using KeepProbFn = std::function<double(double solve_rate)>;
inline double default_keep_prob(double solve_rate) { return 1.0 - solve_rate; }

/// Drops oversized rationales, then weights survivors by keep_prob(solve rate
/// without grounding); weight <= 0 drops. Throws virl::Error("invalid-config") for attempts < 1.
std::vector<TaskCandidate> filter_reasoning_centric(const std::vector<TaskCandidate>& cands, RolloutPort& port,
                                                    double max_area_frac, int attempts,
                                                    const KeepProbFn& keep_prob = default_keep_prob,
                                                    StageLog* log = nullptr);

/// Draws k distractors (k uniform in [k_min, min(k_max, pool)] unless forced),
/// shuffles the answer in and labels choices A, B, ... in the question text.
/// The task keeps the already padded rationale and pad_frac 0.
/// Throws virl::Error("insufficient-distractors") when fewer than k_min usable
/// distractors exist.
Task repackage_mcq(const TaskCandidate& cand, const std::vector<std::string>& distractor_pool, Rng& rng,
                   int k_min = 3, int k_max = 7, std::optional<int> forced_k = std::nullopt);

struct PipelineConfig {
    double pad_frac = 0.1;
    double nms_iou = 0.7;
    double max_area_frac = 0.25;
    int attempts = 8;
    int k_min = 3;
    int k_max = 7;
    /// Seed of the synthetic rollout backend; kept apart from the pipeline seed
    /// so reshuffling choices never changes which tasks survive.
    std::uint64_t backend_seed = 0;

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// Throws virl::Error("invalid-config") naming every offending field.
void validate(const PipelineConfig& cfg);

struct Manifest {
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::size_t>> stage_counts;
    std::vector<Rejection> rejections;

    nlohmann::ordered_json to_json() const;
};

struct PipelineResult {
    std::vector<Task> tasks;
    Manifest manifest;
};

/// generate -> verify -> filter -> repackage. The distractor pool is every
/// distinct generated answer; MCQ streams derive from (seed, record id).
PipelineResult run_pipeline(const std::vector<RegionRecord>& records, GeneratorPort& gen, VerifierPort& ver,
                            RolloutPort& roll, const PipelineConfig& cfg, std::uint64_t seed);

/// Same, with the synthetic backends built from the records themselves.
PipelineResult run_synthetic_pipeline(const std::vector<RegionRecord>& records, const PipelineConfig& cfg,
                                      std::uint64_t seed);

nlohmann::json record_to_json(const RegionRecord& r);
/// Throws virl::Error("bad-record") naming the offending field.
RegionRecord record_from_json(const nlohmann::json& j);

/// Deterministic corpus mixing clean records with near-duplicates, oversized
/// regions, failed verifications, shortcut-solvable questions and unparsable captions.
std::vector<RegionRecord> synthetic_records(std::size_t n, std::uint64_t seed);

}  // namespace virl::datapipe
