// SPDX-License-Identifier: Apache-2.0
#include "virl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "virl/error.hpp"
#include "virl/kernels.hpp"

namespace virl::sim {

namespace {

std::string choice_letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Softmax over `logits` in place; returns the probabilities.
void softmax(std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& l : logits) {
        l = std::exp(l - m);
        sum += l;
    }
    for (double& l : logits) l /= sum;
}

std::size_t sample_index(const std::vector<double>& probs, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

bool is_visited(const std::vector<std::uint16_t>& visited, std::size_t a) {
    return std::find(visited.begin(), visited.end(), static_cast<std::uint16_t>(a)) != visited.end();
}

// Anchors zoomed before a step, without repeats.
template <typename F>
void for_each_visited(const std::vector<std::uint16_t>& visited, F&& f) {
    for (std::size_t i = 0; i < visited.size(); ++i)
        if (std::find(visited.begin(), visited.begin() + static_cast<std::ptrdiff_t>(i), visited[i]) ==
            visited.begin() + static_cast<std::ptrdiff_t>(i))
            f(static_cast<std::size_t>(visited[i]));
}

// Distributions of the three decision heads, shared by sampling and replay.
struct Heads {
    const PolicyParams& p;
    const TaskContext& ctx;
    double temperature;
    std::vector<double> base;      ///< anchor logits before the revisit term
    std::vector<double> base_exp;  ///< exp((base - max) / temperature)
    double revisit_factor = 1.0;   ///< exp(w_revisit / temperature)

    Heads(const PolicyParams& params, const TaskContext& context, double temp)
        : p(params), ctx(context), temperature(temp), base(params.anchor_logits.size()) {
        for (std::size_t a = 0; a < base.size(); ++a) base[a] = p.anchor_logits[a] + p.w_sal * ctx.anchor_saliency[a];
        const double m = base.empty() ? 0.0 : *std::max_element(base.begin(), base.end());
        base_exp.resize(base.size());
        for (std::size_t a = 0; a < base.size(); ++a) base_exp[a] = std::exp((base[a] - m) / temperature);
        revisit_factor = std::exp(p.w_revisit / temperature);
    }

    double zoom_logit(const StepRecord& s) const {
        const double z = s.first_round ? p.b_first : p.b_more + (s.found ? p.w_found : 0.0);
        return z / temperature;
    }

    std::vector<double> anchor_logits_raw(const StepRecord& s) const {
        std::vector<double> l = base;
        for_each_visited(s.visited, [&](std::size_t a) { l[a] += p.w_revisit; });
        return l;
    }

    // Every step shares the base exponentials; only visited anchors are rescaled.
    std::vector<double> anchor_probs(const StepRecord& s) const {
        std::vector<double> w = base_exp;
        for_each_visited(s.visited, [&](std::size_t a) { w[a] *= revisit_factor; });
        const double z = std::accumulate(w.begin(), w.end(), 0.0);
        if (std::isfinite(z) && z > 0.0) {
            for (double& v : w) v /= z;
            return w;
        }
        std::vector<double> l = anchor_logits_raw(s);
        for (double& v : l) v /= temperature;
        softmax(l);
        return l;
    }

    double hint_feature(const StepRecord& s, std::size_t c) const {
        return c == ctx.task.hint_index ? s.hint_factor : 0.0;
    }

    std::vector<double> answer_probs(const StepRecord& s) const {
        const std::size_t k = s.evidence.size();
        std::vector<double> l(k);
        for (std::size_t c = 0; c < k; ++c) l[c] = (p.w_hint * hint_feature(s, c) + p.w_ev * s.evidence[c]) / temperature;
        softmax(l);
        return l;
    }
};

double log_prob_decision(const Heads& h, const StepRecord& s) {
    const double pz = sigmoid(h.zoom_logit(s));
    return std::log(s.zoomed ? pz : 1.0 - pz);
}

double log_prob_select(const Heads& h, const StepRecord& s) {
    if (s.zoomed) return std::log(h.anchor_probs(s)[s.anchor]);
    return std::log(h.answer_probs(s)[s.choice]);
}

void accumulate_decision_grad(const Heads& h, const StepRecord& s, double w, PolicyParams& g) {
    const double pz = sigmoid(h.zoom_logit(s));
    const double d = w * ((s.zoomed ? 1.0 : 0.0) - pz) / h.temperature;
    if (s.first_round) {
        g.b_first += d;
    } else {
        g.b_more += d;
        if (s.found) g.w_found += d;
    }
}

void accumulate_select_grad(const Heads& h, const StepRecord& s, double w, PolicyParams& g) {
    const double scale = w / h.temperature;
    if (s.zoomed) {
        const auto probs = h.anchor_probs(s);
        double e_sal = 0.0, e_vis = 0.0;
        for (std::size_t a = 0; a < probs.size(); ++a) {
            g.anchor_logits[a] -= scale * probs[a];
            e_sal += probs[a] * h.ctx.anchor_saliency[a];
        }
        for_each_visited(s.visited, [&](std::size_t a) { e_vis += probs[a]; });
        g.anchor_logits[s.anchor] += scale;
        g.w_sal += scale * (h.ctx.anchor_saliency[s.anchor] - e_sal);
        g.w_revisit += scale * ((is_visited(s.visited, s.anchor) ? 1.0 : 0.0) - e_vis);
    } else {
        const auto probs = h.answer_probs(s);
        double e_hint = 0.0, e_ev = 0.0;
        for (std::size_t c = 0; c < probs.size(); ++c) {
            e_hint += probs[c] * h.hint_feature(s, c);
            e_ev += probs[c] * s.evidence[c];
        }
        g.w_hint += scale * (h.hint_feature(s, s.choice) - e_hint);
        g.w_ev += scale * (s.evidence[s.choice] - e_ev);
    }
}

std::string dump_params(const PolicyParams& p) {
    std::ostringstream os;
    os << "w_sal=" << p.w_sal << " w_revisit=" << p.w_revisit << " b_first=" << p.b_first << " b_more=" << p.b_more
       << " w_found=" << p.w_found << " w_hint=" << p.w_hint << " w_ev=" << p.w_ev << " anchor_logits=[";
    for (std::size_t i = 0; i < p.anchor_logits.size(); ++i) os << (i ? "," : "") << p.anchor_logits[i];
    os << "]";
    return os.str();
}

}  // namespace

void validate(const SimConfig& c) {
    std::vector<std::string> errs;
    auto need = [&](bool ok, const char* field, const char* why) {
        if (!ok) errs.push_back(std::string(field) + ": " + why);
    };
    need(c.grid_w >= 2 && c.grid_h >= 2, "sim.grid", "grid must be at least 2x2 cells");
    need(c.num_choices >= 2, "sim.num_choices", "need at least two choices");
    need(c.num_glyphs >= c.num_choices, "sim.num_glyphs", "must be >= num_choices");
    need(c.gt_min_side >= 1 && c.gt_min_side <= c.gt_max_side, "sim.gt_min_side", "must be in [1, gt_max_side]");
    need(c.gt_max_side <= std::min(c.grid_w, c.grid_h), "sim.gt_max_side", "target larger than the grid");
    need(c.num_decoys >= 0, "sim.num_decoys", "must be >= 0");
    need(c.p_hint >= 0.0 && c.p_hint <= 1.0, "sim.p_hint", "must be in [0,1]");
    need(c.sal_true_lo <= c.sal_true_hi && c.sal_decoy_lo <= c.sal_decoy_hi, "sim.saliency", "ranges must be ordered");
    need(c.hint_decay >= 0.0 && c.hint_decay <= 1.0, "sim.hint_decay", "must be in [0,1]");
    need(c.max_rounds >= 0, "sim.max_rounds", "must be >= 0");
    need(c.group_size >= 1, "sim.group_size", "must be >= 1");
    need(c.batch_size >= 1, "sim.batch_size", "must be >= 1");
    need(c.iterations >= 0, "sim.iterations", "must be >= 0");
    need(std::isfinite(c.lr) && c.lr >= 0.0, "sim.lr", "must be finite and >= 0");
    need(c.temperature >= 0.0, "sim.temperature", "must be >= 0");
    need(c.max_draw_factor >= 1, "sim.max_draw_factor", "must be >= 1");
    need(c.ppo_epochs >= 1, "sim.ppo_epochs", "must be >= 1");
    need(c.pad_frac >= 0.0, "sim.pad_frac", "must be >= 0");
    if (!errs.empty()) {
        std::string msg = "invalid sim config:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw Error("invalid-config", msg);
    }
}

Task NeedleTask::to_task(double pad_frac) const {
    Task t;
    t.task_id = task_id;
    t.question = "Which glyph fills the marked target region?";
    for (int g : choices) t.choices.push_back("glyph-" + std::to_string(g));
    t.key = choice_letter(key_index);
    t.rationale = gt;
    t.bounds = bounds();
    t.pad_frac = pad_frac;
    return t;
}

NeedleTask generate_task(Rng& rng, const SimConfig& cfg, std::string task_id) {
    validate(cfg);
    NeedleTask t;
    t.task_id = std::move(task_id);
    t.width = cfg.grid_w;
    t.height = cfg.grid_h;

    std::vector<int> glyphs(static_cast<std::size_t>(cfg.num_glyphs));
    std::iota(glyphs.begin(), glyphs.end(), 0);
    std::shuffle(glyphs.begin(), glyphs.end(), rng);
    t.choices.assign(glyphs.begin(), glyphs.begin() + cfg.num_choices);
    const std::size_t k = t.choices.size();
    t.key_index = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(k) - 1));
    auto random_distractor = [&] {
        auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(k) - 2));
        return i >= t.key_index ? i + 1 : i;
    };

    const int w = uniform_int(rng, cfg.gt_min_side, cfg.gt_max_side);
    const int h = uniform_int(rng, cfg.gt_min_side, cfg.gt_max_side);
    const int x = uniform_int(rng, 0, cfg.grid_w - w);
    const int y = uniform_int(rng, 0, cfg.grid_h - h);
    t.gt = {double(x), double(y), double(x + w), double(y + h)};

    t.grid.assign(static_cast<std::size_t>(cfg.grid_w * cfg.grid_h), -1);
    auto fill = [&](const Box& b, int glyph) {
        for (int yy = int(b.y1); yy < int(b.y2); ++yy)
            for (int xx = int(b.x1); xx < int(b.x2); ++xx) t.grid[std::size_t(yy * cfg.grid_w + xx)] = glyph;
    };
    fill(t.gt, t.key());
    t.spots.push_back({t.gt, cfg.sal_true_lo + (cfg.sal_true_hi - cfg.sal_true_lo) * uniform01(rng)});

    std::vector<Box> placed{t.gt};
    for (int d = 0; d < cfg.num_decoys; ++d) {
        for (int attempt = 0; attempt < 32; ++attempt) {
            const int dx = uniform_int(rng, 0, cfg.grid_w - w);
            const int dy = uniform_int(rng, 0, cfg.grid_h - h);
            const Box b{double(dx), double(dy), double(dx + w), double(dy + h)};
            const bool clear = std::none_of(placed.begin(), placed.end(),
                                            [&](const Box& o) { return geom::intersect(o, b).area() > 0.0; });
            if (!clear) continue;
            placed.push_back(b);
            fill(b, t.choices[random_distractor()]);
            t.spots.push_back({b, cfg.sal_decoy_lo + (cfg.sal_decoy_hi - cfg.sal_decoy_lo) * uniform01(rng)});
            break;
        }
    }
    for (auto& cell : t.grid)
        if (cell < 0) cell = t.choices[random_distractor()];
    std::shuffle(t.spots.begin(), t.spots.end(), rng);

    t.hint_index = uniform01(rng) < cfg.p_hint ? t.key_index : random_distractor();
    return t;
}

NeedleEnv::NeedleEnv(const NeedleTask& task, int max_rounds) : task_(&task), max_rounds_(max_rounds) {}

CoarseView NeedleEnv::reset() {
    zooms_ = 0;
    terminal_ = false;
    return {task_->hint_index, task_->width, task_->height, task_->spots};
}

EnvObservation NeedleEnv::step(const EnvAction& action) {
    if (terminal_) throw Error("episode-terminal", "env_step: episode already ended");
    if (const auto* z = std::get_if<ZoomAction>(&action)) {
        if (zooms_ >= max_rounds_)
            throw Error("round-limit", "env_step: zoom " + std::to_string(zooms_ + 1) + " exceeds the limit of " +
                                           std::to_string(max_rounds_));
        const Box b = geom::clamp_box(z->box, task_->bounds());
        ++zooms_;
        ZoomView view{b, {}};
        const int x0 = int(std::floor(b.x1)), x1 = int(std::ceil(b.x2));
        const int y0 = int(std::floor(b.y1)), y1 = int(std::ceil(b.y2));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const Box cell{double(x), double(y), double(x + 1), double(y + 1)};
                if (geom::intersect(cell, b).area() > 0.0) view.glyphs.push_back(task_->glyph_at(x, y));
            }
        return view;
    }
    const auto& a = std::get<Answer>(action);
    terminal_ = true;
    Outcome out;
    if (a.text.size() == 1 && a.text[0] >= 'A' && std::size_t(a.text[0] - 'A') < task_->choices.size())
        out.answer_index = std::size_t(a.text[0] - 'A');
    else
        out.answer_index = task_->choices.size();
    out.correct = out.answer_index == task_->key_index;
    return out;
}

std::vector<Box> make_anchors(int width, int height) {
    std::vector<Box> anchors;
    for (int side : {2, 4}) {
        if (side > width || side > height) continue;
        const int stride = side / 2;
        for (int y = 0; y + side <= height; y += stride)
            for (int x = 0; x + side <= width; x += stride)
                anchors.push_back({double(x), double(y), double(x + side), double(y + side)});
    }
    anchors.push_back({0.0, 0.0, double(width), double(height)});
    return anchors;
}

PolicyParams PolicyParams::initial(const SimConfig& cfg, std::size_t anchors) {
    PolicyParams p;
    p.anchor_logits.assign(anchors, 0.0);
    p.w_sal = cfg.init_w_sal;
    p.b_first = cfg.prompt == PromptTemplate::clear ? cfg.init_b_first_clear : cfg.init_b_first_ambiguous;
    p.b_more = cfg.init_b_more;
    p.w_hint = cfg.init_w_hint;
    p.w_ev = cfg.init_w_ev;
    return p;
}

bool PolicyParams::finite() const {
    const auto flat = flatten();
    return std::all_of(flat.begin(), flat.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> PolicyParams::flatten() const {
    std::vector<double> v = anchor_logits;
    v.insert(v.end(), {w_sal, w_revisit, b_first, b_more, w_found, w_hint, w_ev});
    return v;
}

TaskContext make_context(NeedleTask task, const std::vector<Box>& anchors, double pad_frac) {
    TaskContext ctx;
    ctx.mcq = task.to_task(pad_frac);
    ctx.anchor_saliency.assign(anchors.size(), 0.0);
    std::vector<double> overlap(anchors.size());
    for (const auto& spot : task.spots) {
        kernels::iou_one_to_many(spot.box, anchors, overlap);
        for (std::size_t a = 0; a < anchors.size(); ++a) ctx.anchor_saliency[a] += spot.intensity * overlap[a];
    }
    ctx.task = std::move(task);
    return ctx;
}

namespace {

Rollout run_episode(const Heads& heads, const std::vector<Box>& anchors, Rng& rng, const RolloutSettings& st) {
    const auto& task = heads.ctx.task;
    const std::size_t k = task.choices.size();
    NeedleEnv env(task, st.max_rounds);
    env.reset();

    Rollout r;
    Trace trace;
    std::vector<std::uint16_t> visited;
    std::vector<double> evidence(k, 0.0);
    bool found = false;
    const bool greedy = st.temperature <= 0.0;

    for (int round = 0;; ++round) {
        StepRecord s;
        s.first_round = round == 0;
        s.found = found;
        s.visited = visited;
        s.decided = round < st.max_rounds;
        if (s.decided) {
            const double z = greedy ? (s.first_round ? heads.p.b_first : heads.p.b_more + (found ? heads.p.w_found : 0.0))
                                    : heads.zoom_logit(s);
            s.zoomed = greedy ? z > 0.0 : uniform01(rng) < sigmoid(z);
            if (!greedy) s.logp_decision = log_prob_decision(heads, s);
        }

        if (s.zoomed) {
            if (greedy) {
                s.anchor = argmax(heads.anchor_logits_raw(s));
            } else {
                const auto probs = heads.anchor_probs(s);
                s.anchor = sample_index(probs, rng);
                s.logp_select = std::log(probs[s.anchor]);
            }
            const auto view = std::get<ZoomView>(env.step(ZoomAction{"image_zoom_in", anchors[s.anchor]}));
            std::vector<int> counts(k, 0);
            for (int g : view.glyphs)
                for (std::size_t c = 0; c < k; ++c)
                    if (task.choices[c] == g) ++counts[c];
            const double cells = static_cast<double>(view.glyphs.size());
            for (std::size_t c = 0; c < k; ++c) {
                evidence[c] = std::max(evidence[c], counts[c] / cells);
                if (counts[c] == static_cast<int>(view.glyphs.size())) found = true;
            }
            visited.push_back(static_cast<std::uint16_t>(s.anchor));
            trace.steps.push_back({"inspect region " + std::to_string(round + 1), ZoomAction{"image_zoom_in", anchors[s.anchor]}});
            r.steps.push_back(std::move(s));
            continue;
        }

        s.evidence = evidence;
        s.hint_factor = std::pow(st.hint_decay, static_cast<double>(round));
        if (greedy) {
            std::vector<double> l(k);
            for (std::size_t c = 0; c < k; ++c) l[c] = heads.p.w_hint * heads.hint_feature(s, c) + heads.p.w_ev * evidence[c];
            s.choice = argmax(l);
        } else {
            const auto probs = heads.answer_probs(s);
            s.choice = sample_index(probs, rng);
            s.logp_select = std::log(probs[s.choice]);
        }
        env.step(Answer{choice_letter(s.choice)});
        trace.steps.push_back({"answer from gathered evidence", Answer{choice_letter(s.choice)}});
        r.steps.push_back(std::move(s));
        break;
    }

    TraceConfig tcfg;
    tcfg.max_rounds = st.max_rounds;
    tcfg.image_bounds = task.bounds();
    r.raw = render_trace(trace, tcfg);
    r.parsed = parse_trace(r.raw, tcfg);
    r.breakdown = total_reward(r.parsed.trace, r.parsed.verdict, heads.ctx.mcq, st.fidelity, st.redundancy, st.reward);
    r.score = metrics::score_trace(r.parsed.trace, heads.ctx.mcq);
    return r;
}

}  // namespace

SimGroup rollout_group(const PolicyParams& policy, const TaskContext& ctx, const std::vector<Box>& anchors,
                       int group_size, std::uint64_t seed, const RolloutSettings& settings) {
    if (group_size < 1) throw Error("invalid-config", "rollout_group: group size must be >= 1");
    const double temp = settings.temperature > 0.0 ? settings.temperature : 1.0;
    Heads heads{policy, ctx, temp};
    SimGroup g;
    g.group.task_id = ctx.task.task_id;
    for (int i = 0; i < group_size; ++i) {
        Rng rng = make_rng(seed, "rollout", {static_cast<std::uint64_t>(i)});
        Rollout r = run_episode(heads, anchors, rng, settings);
        g.group.rollouts.emplace_back(r.parsed.trace, r.breakdown);
        g.rollouts.push_back(std::move(r));
    }
    return g;
}

std::vector<TokenSpan> token_segmentation(const Rollout& r) {
    std::vector<TokenSpan> seg;
    for (std::size_t i = 0; i < r.steps.size(); ++i) seg.emplace_back(i, r.steps[i].decided ? 2 : 1);
    return seg;
}

PolicyParams policy_update(const PolicyParams& params, const std::vector<UpdateBatch>& batch,
                           const std::vector<Box>& anchors, double lr, const RolloutSettings& settings, int epochs,
                           double eps_low, double eps_high) {
    PolicyParams cur = params;
    const double temp = settings.temperature > 0.0 ? settings.temperature : 1.0;
    std::size_t tokens = 0;
    for (const auto& b : batch) tokens += b.token_advantages.size();
    if (tokens == 0 || lr == 0.0) return cur;

    for (int epoch = 0; epoch < std::max(1, epochs); ++epoch) {
        PolicyParams grad;
        grad.anchor_logits.assign(anchors.size(), 0.0);
        std::optional<Heads> heads_cache;
        for (const auto& b : batch) {
            if (!heads_cache || &heads_cache->ctx != b.ctx) heads_cache.emplace(cur, *b.ctx, temp);
            const Heads& heads = *heads_cache;
            std::size_t t = 0;
            for (const auto& s : b.rollout->steps) {
                // Token weight: d/d(logp) of the clipped surrogate at the replay ratio.
                auto weight = [&](double logp_new, double logp_old, double a) {
                    const double ratio = std::exp(logp_new - logp_old);
                    return clipped_surrogate_grad(ratio, a, eps_low, eps_high) * ratio;
                };
                if (s.decided) {
                    const double a = b.token_advantages.at(t++);
                    const double w = epoch == 0 ? a : weight(log_prob_decision(heads, s), s.logp_decision, a);
                    if (w != 0.0) accumulate_decision_grad(heads, s, w, grad);
                }
                const double a = b.token_advantages.at(t++);
                const double w = epoch == 0 ? a : weight(log_prob_select(heads, s), s.logp_select, a);
                if (w != 0.0) accumulate_select_grad(heads, s, w, grad);
            }
            if (t != b.token_advantages.size())
                throw Error("segmentation-mismatch", "policy_update: token advantages do not match the rollout");
        }
        if (!grad.finite())
            throw Error("nan-gradient", "policy_update: non-finite gradient; params: " + dump_params(cur) +
                                            "; gradient: " + dump_params(grad));
        const double scale = lr / static_cast<double>(tokens);
        for (std::size_t a = 0; a < anchors.size(); ++a) cur.anchor_logits[a] += scale * grad.anchor_logits[a];
        cur.w_sal += scale * grad.w_sal;
        cur.w_revisit += scale * grad.w_revisit;
        cur.b_first += scale * grad.b_first;
        cur.b_more += scale * grad.b_more;
        cur.w_found += scale * grad.w_found;
        cur.w_hint += scale * grad.w_hint;
        cur.w_ev += scale * grad.w_ev;
    }
    if (!cur.finite()) throw Error("nan-gradient", "policy_update: parameters became non-finite: " + dump_params(cur));
    return cur;
}

TrainingLog run_experiment(const ExperimentConfig& cfg) {
    validate(cfg.sim);
    const auto& sc = cfg.sim;
    const auto anchors = make_anchors(sc.grid_w, sc.grid_h);

    TrainingLog log;
    log.mode = sc.reward_mode;
    log.seed = cfg.seed;
    PolicyParams params = PolicyParams::initial(sc, anchors.size());

    RolloutSettings st;
    st.max_rounds = sc.max_rounds;
    st.temperature = sc.temperature;
    st.hint_decay = sc.hint_decay;
    st.fidelity = cfg.fidelity;
    st.redundancy = cfg.redundancy;
    st.reward = cfg.reward;
    st.reward.mode = sc.reward_mode;

    const bool modulated = sc.reward_mode == RewardMode::virl && cfg.credit.fine_grained;
    ThresholdState threshold_state;
    double hit_rate = 0.0;

    for (int it = 0; it < sc.iterations; ++it) {
        if (cfg.use_schedule && sc.reward_mode == RewardMode::virl)
            st.fidelity.h0 = schedule_h0(cfg.schedule, it, hit_rate, threshold_state);

        IterationStats row;
        row.iteration = it;
        row.h0 = st.fidelity.h0;

        std::vector<TaskContext> contexts;
        std::vector<SimGroup> groups;
        std::vector<char> keep;
        std::size_t episodes = 0, correct = 0, zooms = 0, with = 0, wrong_with = 0, hits = 0;
        std::vector<Box> zoom_boxes;
        std::vector<double> zoom_cov;
        double coverage_sum = 0.0, best_sum = 0.0, reward_sum = 0.0, fid_sum = 0.0;

        const int max_draws = sc.batch_size * sc.max_draw_factor;
        for (int draw = 0; draw < max_draws && row.groups_kept < sc.batch_size; ++draw) {
            Rng task_rng = make_rng(cfg.seed, "task", {std::uint64_t(it), std::uint64_t(draw)});
            auto task = generate_task(task_rng, sc, "it" + std::to_string(it) + "-" + std::to_string(draw));
            contexts.push_back(make_context(std::move(task), anchors, sc.pad_frac));
            const auto& ctx = contexts.back();
            auto group = rollout_group(params, ctx, anchors, sc.group_size,
                                       derive_seed(cfg.seed, "group", {std::uint64_t(it), std::uint64_t(draw)}), st);
            ++row.groups_drawn;
            for (const auto& r : group.rollouts) {
                ++episodes;
                const bool ok = r.score.answer_correct;
                correct += ok ? 1 : 0;
                zooms += static_cast<std::size_t>(r.score.zoom_count);
                row.max_zooms = std::max(row.max_zooms, r.score.zoom_count);
                if (r.score.zoom_count > 0) {
                    ++with;
                    best_sum += r.score.best_coverage.value_or(0.0);
                    if (!ok) ++wrong_with;
                    zoom_boxes.clear();
                    for (const auto& z : extract_actions(r.parsed.trace)) zoom_boxes.push_back(z.box);
                    zoom_cov.resize(zoom_boxes.size());
                    kernels::coverage_many(zoom_boxes, ctx.mcq.rationale, zoom_cov);
                    coverage_sum += std::accumulate(zoom_cov.begin(), zoom_cov.end(), 0.0);
                }
                for (double u : r.breakdown.per_step_iou) hits += u > st.fidelity.h0 ? 1 : 0;
                reward_sum += r.breakdown.r_total;
                fid_sum += r.breakdown.r_fid_bar;
                if (it >= sc.iterations - cfg.dump_last_iterations)
                    log.traces.push_back({it, ctx.task.task_id, r.raw, ctx.mcq});
            }
            const bool informative = dynamic_sample_filter(group.group);
            row.groups_kept += informative ? 1 : 0;
            keep.push_back(informative ? 1 : 0);
            groups.push_back(std::move(group));
        }

        std::vector<UpdateBatch> batch;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            if (!keep[gi]) continue;
            const auto& g = groups[gi];
            std::vector<double> rewards;
            for (const auto& r : g.rollouts) rewards.push_back(r.breakdown.r_total);
            const auto adv = group_advantages(rewards, cfg.credit.std_normalize);
            const double sum = std::accumulate(adv.begin(), adv.end(), 0.0);
            row.max_abs_advantage_sum = std::max(row.max_abs_advantage_sum, std::abs(sum));
            for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
                const auto& r = g.rollouts[i];
                AdvantageProfile prof =
                    modulated ? modulate(adv[i], classify_steps(r.parsed.trace, r.breakdown), cfg.modulator)
                              : uniform_profile(adv[i], r.parsed.trace.steps.size());
                batch.push_back({&contexts[gi], &r, broadcast_to_tokens(prof, token_segmentation(r))});
            }
        }
        params = policy_update(params, batch, anchors, sc.lr, st, sc.ppo_epochs, cfg.credit.eps_low, cfg.credit.eps_high);

        row.episodes = static_cast<int>(episodes);
        row.zooms = static_cast<int>(zooms);
        row.zooming_episodes = static_cast<int>(with);
        const double n = std::max<std::size_t>(1, episodes);
        row.answer_accuracy = correct / n;
        row.rationale_count = zooms / n;
        row.rationale_accuracy = zooms ? coverage_sum / static_cast<double>(zooms) : 0.0;
        row.best_coverage = with ? best_sum / static_cast<double>(with) : 0.0;
        row.wrong_with_rationale = wrong_with / n;
        row.mean_reward = reward_sum / n;
        row.mean_fid_bar = fid_sum / n;
        hit_rate = zooms ? static_cast<double>(hits) / static_cast<double>(zooms) : 0.0;
        log.rows.push_back(row);
    }
    log.final_params = params;
    return log;
}

FinalSummary TrainingLog::final_summary(std::size_t window) const {
    FinalSummary f;
    if (rows.empty()) return f;
    window = std::clamp<std::size_t>(window, 1, rows.size());
    double episodes = 0.0, correct = 0.0, zooms = 0.0, cov = 0.0, with = 0.0, best = 0.0, wrong = 0.0, reward = 0.0;
    for (std::size_t i = rows.size() - window; i < rows.size(); ++i) {
        const auto& r = rows[i];
        episodes += r.episodes;
        correct += r.answer_accuracy * r.episodes;
        zooms += r.zooms;
        cov += r.rationale_accuracy * r.zooms;
        with += r.zooming_episodes;
        best += r.best_coverage * r.zooming_episodes;
        wrong += r.wrong_with_rationale * r.episodes;
        reward += r.mean_reward * r.episodes;
    }
    if (episodes > 0.0) {
        f.answer_accuracy = correct / episodes;
        f.rationale_count = zooms / episodes;
        f.wrong_with_rationale = wrong / episodes;
        f.mean_reward = reward / episodes;
    }
    f.rationale_accuracy = zooms > 0.0 ? cov / zooms : 0.0;
    f.best_coverage = with > 0.0 ? best / with : 0.0;
    f.zooms = static_cast<int>(zooms);
    return f;
}

}  // namespace virl::sim
