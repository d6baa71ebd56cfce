#include "core/span_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "core/errors.hpp"
#include "core/strings.hpp"

namespace spanforge {

using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;

namespace {

constexpr std::int64_t kTags = 3;
constexpr double kProbFloor = 1e-12;

double logsumexp3(const double* v, std::int64_t n) {
    double m = v[0];
    for (std::int64_t i = 1; i < n; ++i) m = std::max(m, v[i]);
    if (!std::isfinite(m)) return m;  // all -inf-ish: keep the mask value
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

void check_lattice_inputs(const Tensor& emissions, const Tensor& transitions, const Tensor& start,
                          const char* who) {
    if (emissions.rank() != 2 || emissions.cols() != kTags)
        throw ContractError(std::string(who) + ": emissions must be (T x 3), got " + emissions.shape_str());
    if (emissions.rows() < 1) throw ContractError(std::string(who) + ": empty lattice");
    if (transitions.rank() != 2 || transitions.rows() != kTags || transitions.cols() != kTags)
        throw ContractError(std::string(who) + ": transitions must be 3x3");
    if (start.rank() != 1 || start.dim(0) != kTags)
        throw ContractError(std::string(who) + ": start must have 3 entries");
}

void check_gold_path(const std::vector<Tag>& gold) {
    if (gold.empty()) throw ContractError("crf gold path is empty");
    if (gold.front() == Tag::I) throw ContractError("crf gold path starts inside a span (I at t=0)");
    for (std::size_t t = 1; t < gold.size(); ++t) {
        if (gold[t - 1] == Tag::O && gold[t] == Tag::I)
            throw ContractError("crf gold path has O->I at t=" + std::to_string(t));
    }
}

}  // namespace

CrfParams CrfParams::init() {
    return CrfParams{Parameter("crf.transitions", Tensor::zeros({kTags, kTags})),
                     Parameter("crf.start", Tensor::zeros({kTags}))};
}

Tensor masked_transitions(const Tensor& transitions) {
    Tensor out = transitions;
    out.at(static_cast<std::int64_t>(Tag::O), static_cast<std::int64_t>(Tag::I)) = kMaskScore;
    return out;
}

Tensor masked_start(const Tensor& start) {
    Tensor out = start;
    out[static_cast<std::int64_t>(Tag::I)] = kMaskScore;
    return out;
}

double crf_log_partition(const Tensor& emissions, const Tensor& transitions, const Tensor& start) {
    check_lattice_inputs(emissions, transitions, start, "crf_log_partition");
    const std::int64_t T = emissions.rows();
    double alpha[kTags];
    for (std::int64_t j = 0; j < kTags; ++j) alpha[j] = start[j] + emissions.at(0, j);
    for (std::int64_t t = 1; t < T; ++t) {
        double next[kTags];
        for (std::int64_t j = 0; j < kTags; ++j) {
            double terms[kTags];
            for (std::int64_t i = 0; i < kTags; ++i) terms[i] = alpha[i] + transitions.at(i, j);
            next[j] = logsumexp3(terms, kTags) + emissions.at(t, j);
        }
        std::copy(next, next + kTags, alpha);
    }
    return logsumexp3(alpha, kTags);
}

double crf_gold_score(const Tensor& emissions, const Tensor& transitions, const Tensor& start,
                      const std::vector<Tag>& gold) {
    check_lattice_inputs(emissions, transitions, start, "crf_gold_score");
    if (static_cast<std::int64_t>(gold.size()) != emissions.rows())
        throw ContractError("crf_gold_score: gold length does not match lattice length");
    auto g = [&](std::size_t t) { return static_cast<std::int64_t>(gold[t]); };
    double s = start[g(0)] + emissions.at(0, g(0));
    for (std::size_t t = 1; t < gold.size(); ++t)
        s += transitions.at(g(t - 1), g(t)) + emissions.at(static_cast<std::int64_t>(t), g(t));
    return s;
}

std::vector<Tag> crf_viterbi(const Tensor& emissions, const Tensor& transitions, const Tensor& start) {
    check_lattice_inputs(emissions, transitions, start, "crf_viterbi");
    const std::int64_t T = emissions.rows();
    std::vector<std::array<double, kTags>> delta(static_cast<std::size_t>(T));
    std::vector<std::array<std::int64_t, kTags>> back(static_cast<std::size_t>(T));
    for (std::int64_t j = 0; j < kTags; ++j) {
        delta[0][static_cast<std::size_t>(j)] = start[j] + emissions.at(0, j);
        back[0][static_cast<std::size_t>(j)] = -1;
    }
    for (std::int64_t t = 1; t < T; ++t) {
        for (std::int64_t j = 0; j < kTags; ++j) {
            // Strictly-greater replacement keeps the lowest tag index on ties,
            // i.e. ties break toward O, then B, then I.
            double best = delta[static_cast<std::size_t>(t - 1)][0] + transitions.at(0, j);
            std::int64_t arg = 0;
            for (std::int64_t i = 1; i < kTags; ++i) {
                const double cand = delta[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i)] +
                                    transitions.at(i, j);
                if (cand > best) {
                    best = cand;
                    arg = i;
                }
            }
            delta[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = best + emissions.at(t, j);
            back[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = arg;
        }
    }
    std::int64_t arg = 0;
    double best = delta[static_cast<std::size_t>(T - 1)][0];
    for (std::int64_t j = 1; j < kTags; ++j) {
        if (delta[static_cast<std::size_t>(T - 1)][static_cast<std::size_t>(j)] > best) {
            best = delta[static_cast<std::size_t>(T - 1)][static_cast<std::size_t>(j)];
            arg = j;
        }
    }
    std::vector<Tag> path(static_cast<std::size_t>(T));
    for (std::int64_t t = T - 1; t >= 0; --t) {
        path[static_cast<std::size_t>(t)] = static_cast<Tag>(arg);
        if (t > 0) arg = back[static_cast<std::size_t>(t)][static_cast<std::size_t>(arg)];
    }
    return path;
}

Tensor crf_marginals(const Tensor& emissions, const Tensor& transitions, const Tensor& start) {
    check_lattice_inputs(emissions, transitions, start, "crf_marginals");
    const std::int64_t T = emissions.rows();
    std::vector<std::array<double, kTags>> alpha(static_cast<std::size_t>(T));
    std::vector<std::array<double, kTags>> beta(static_cast<std::size_t>(T));
    for (std::int64_t j = 0; j < kTags; ++j) alpha[0][static_cast<std::size_t>(j)] = start[j] + emissions.at(0, j);
    for (std::int64_t t = 1; t < T; ++t) {
        for (std::int64_t j = 0; j < kTags; ++j) {
            double terms[kTags];
            for (std::int64_t i = 0; i < kTags; ++i)
                terms[i] = alpha[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i)] + transitions.at(i, j);
            alpha[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = logsumexp3(terms, kTags) + emissions.at(t, j);
        }
    }
    for (std::int64_t j = 0; j < kTags; ++j) beta[static_cast<std::size_t>(T - 1)][static_cast<std::size_t>(j)] = 0.0;
    for (std::int64_t t = T - 2; t >= 0; --t) {
        for (std::int64_t i = 0; i < kTags; ++i) {
            double terms[kTags];
            for (std::int64_t j = 0; j < kTags; ++j)
                terms[j] = transitions.at(i, j) + emissions.at(t + 1, j) +
                           beta[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(j)];
            beta[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = logsumexp3(terms, kTags);
        }
    }
    double logz_terms[kTags];
    for (std::int64_t j = 0; j < kTags; ++j) logz_terms[j] = alpha[static_cast<std::size_t>(T - 1)][static_cast<std::size_t>(j)];
    const double logz = logsumexp3(logz_terms, kTags);
    Tensor out = Tensor::zeros({T, kTags});
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t j = 0; j < kTags; ++j)
            out.at(t, j) = std::exp(alpha[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] +
                                      beta[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] - logz);
    return out;
}

namespace {

struct MaskedLattice {
    Var trans;
    Var start;
};

MaskedLattice apply_mask(Var transitions, Var start, Graph& g) {
    Tensor tmask = Tensor::zeros({kTags, kTags});
    tmask.at(static_cast<std::int64_t>(Tag::O), static_cast<std::int64_t>(Tag::I)) = kMaskScore;
    Tensor smask = Tensor::zeros({kTags});
    smask[static_cast<std::int64_t>(Tag::I)] = kMaskScore;
    return MaskedLattice{numcore::add(transitions, g.constant(tmask)),
                         numcore::add(start, g.constant(smask))};
}

std::vector<Var> forward_alphas(Var emissions, const MaskedLattice& m) {
    const std::int64_t T = emissions.val().rows();
    std::vector<Var> alphas;
    alphas.reserve(static_cast<std::size_t>(T));
    alphas.push_back(numcore::add(m.start, numcore::row(emissions, 0)));
    for (std::int64_t t = 1; t < T; ++t) {
        Var scores = numcore::add_colvec(m.trans, alphas.back());   // [i][j] = alpha[i] + trans[i][j]
        Var reduced = numcore::logsumexp_cols(scores);              // (3), reduced over rows
        alphas.push_back(numcore::add(reduced, numcore::row(emissions, t)));
    }
    return alphas;
}

}  // namespace

Var crf_nll(Var emissions, Var transitions, Var start, const std::vector<Tag>& gold) {
    Graph& g = *emissions.graph();
    check_lattice_inputs(emissions.val(), transitions.val(), start.val(), "crf_nll");
    if (static_cast<std::int64_t>(gold.size()) != emissions.val().rows())
        throw ContractError("crf_nll: gold length does not match lattice length");
    check_gold_path(gold);

    const MaskedLattice m = apply_mask(transitions, start, g);
    const std::vector<Var> alphas = forward_alphas(emissions, m);
    Var logz = numcore::logsumexp(alphas.back());

    auto tag = [&](std::size_t t) { return static_cast<std::int64_t>(gold[t]); };
    std::vector<std::int64_t> emit_idx;
    emit_idx.reserve(gold.size());
    for (std::size_t t = 0; t < gold.size(); ++t)
        emit_idx.push_back(static_cast<std::int64_t>(t) * kTags + tag(t));
    Var score = numcore::add(numcore::sum(numcore::gather(m.start, {tag(0)})),
                             numcore::sum(numcore::gather(emissions, emit_idx)));
    if (gold.size() > 1) {
        std::vector<std::int64_t> trans_idx;
        trans_idx.reserve(gold.size() - 1);
        for (std::size_t t = 1; t < gold.size(); ++t)
            trans_idx.push_back(tag(t - 1) * kTags + tag(t));
        score = numcore::add(score, numcore::sum(numcore::gather(m.trans, trans_idx)));
    }
    return numcore::sub(logz, score);
}

Var crf_marginals_graph(Var emissions, Var transitions, Var start) {
    Graph& g = *emissions.graph();
    check_lattice_inputs(emissions.val(), transitions.val(), start.val(), "crf_marginals_graph");
    const std::int64_t T = emissions.val().rows();
    const MaskedLattice m = apply_mask(transitions, start, g);
    const std::vector<Var> alphas = forward_alphas(emissions, m);
    Var logz = numcore::logsumexp(alphas.back());

    std::vector<Var> betas(static_cast<std::size_t>(T), Var());
    betas[static_cast<std::size_t>(T - 1)] = g.constant(Tensor::zeros({kTags}));
    for (std::int64_t t = T - 2; t >= 0; --t) {
        // inner[i][j] = trans[i][j] + e[t+1][j] + beta[t+1][j]; reduce over j.
        Var withem = numcore::add(m.trans, numcore::tile_rows(
                                               numcore::add(numcore::row(emissions, t + 1),
                                                            betas[static_cast<std::size_t>(t + 1)]),
                                               kTags));
        // Reduce over columns: transpose via reshape is unavailable, so reduce
        // rows of the transpose expressed with add_colvec is not an option
        // either; logsumexp_cols reduces over rows, hence feed the transpose.
        // Build the transpose explicitly from gathered columns.
        std::vector<std::int64_t> idx;
        idx.reserve(kTags * kTags);
        for (std::int64_t j = 0; j < kTags; ++j)
            for (std::int64_t i = 0; i < kTags; ++i) idx.push_back(i * kTags + j);
        Var transposed = numcore::reshape(numcore::gather(withem, idx), {kTags, kTags});
        betas[static_cast<std::size_t>(t)] = numcore::logsumexp_cols(transposed);
    }

    std::vector<Var> rows_out;
    rows_out.reserve(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        Var lp = numcore::add(alphas[static_cast<std::size_t>(t)], betas[static_cast<std::size_t>(t)]);
        lp = numcore::sadd(numcore::neg(logz), lp);
        rows_out.push_back(numcore::exp(lp));
    }
    return numcore::stack_rows(rows_out);
}

PointerParams PointerParams::init(std::int64_t dim) {
    if (dim < 1) throw ContractError("PointerParams::init: dim must be positive");
    return PointerParams{Parameter("ptr.w_start", Tensor::zeros({dim})),
                         Parameter("ptr.w_end", Tensor::zeros({dim})),
                         Parameter("ptr.b_start", Tensor::scalar(0.0)),
                         Parameter("ptr.b_end", Tensor::scalar(0.0))};
}

PointerLogits pointer_logits(Var tokens, PointerParams& params, Graph& g) {
    if (tokens.val().rank() != 2) throw ContractError("pointer_logits: tokens must be (T x d)");
    if (tokens.val().cols() != params.w_start.value.dim(0))
        throw ContractError("pointer_logits: token dim " + std::to_string(tokens.val().cols()) +
                            " does not match pointer dim " + std::to_string(params.w_start.value.dim(0)));
    Var ws = g.param(params.w_start), we = g.param(params.w_end);
    Var bs = g.param(params.b_start), be = g.param(params.b_end);
    return PointerLogits{numcore::sadd(bs, numcore::matmul(tokens, ws)),
                         numcore::sadd(be, numcore::matmul(tokens, we))};
}

namespace {

Var indicator_bce(Var logits, const std::vector<char>& positive) {
    const std::int64_t T = logits.val().dim(0);
    std::vector<Var> losses;
    losses.reserve(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        Var z = numcore::sum(numcore::gather(logits, {t}));
        losses.push_back(numcore::bce_with_logit(z, positive[static_cast<std::size_t>(t)] ? 1.0 : 0.0));
    }
    return numcore::mean(numcore::pack(losses));
}

}  // namespace

Var pointer_loss(const PointerLogits& logits, const std::vector<Span>& gold_spans) {
    if (logits.start.val().rank() != 1 || logits.end.val().rank() != 1 ||
        logits.start.val().dim(0) != logits.end.val().dim(0))
        throw ContractError("pointer_loss: start/end logits must be 1-D of equal length");
    const std::int64_t T = logits.start.val().dim(0);
    std::vector<char> is_start(static_cast<std::size_t>(T), 0), is_end(static_cast<std::size_t>(T), 0);
    for (const Span& s : gold_spans) {
        if (s.begin < 0 || s.end < s.begin || s.end >= T)
            throw ContractError("pointer_loss: gold span out of range");
        is_start[static_cast<std::size_t>(s.begin)] = 1;
        is_end[static_cast<std::size_t>(s.end)] = 1;
    }
    return numcore::add(indicator_bce(logits.start, is_start), indicator_bce(logits.end, is_end));
}

double pointer_loss_value(const Tensor& p_start, const Tensor& p_end,
                          const std::vector<Span>& gold_spans) {
    if (p_start.rank() != 1 || p_end.rank() != 1 || p_start.dim(0) != p_end.dim(0))
        throw ContractError("pointer_loss_value: probability vectors must be 1-D of equal length");
    const std::int64_t T = p_start.dim(0);
    std::vector<char> is_start(static_cast<std::size_t>(T), 0), is_end(static_cast<std::size_t>(T), 0);
    for (const Span& s : gold_spans) {
        if (s.begin < 0 || s.end < s.begin || s.end >= T)
            throw ContractError("pointer_loss_value: gold span out of range");
        is_start[static_cast<std::size_t>(s.begin)] = 1;
        is_end[static_cast<std::size_t>(s.end)] = 1;
    }
    auto bce_mean = [T](const Tensor& p, const std::vector<char>& pos) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < T; ++t) {
            const double pt = std::min(1.0 - kProbFloor, std::max(kProbFloor, p[t]));
            acc += pos[static_cast<std::size_t>(t)] ? -std::log(pt) : -std::log(1.0 - pt);
        }
        return acc / static_cast<double>(T);
    };
    return bce_mean(p_start, is_start) + bce_mean(p_end, is_end);
}

double span_iou(const Span& a, const Span& b) {
    const std::int64_t lo = std::max(a.begin, b.begin);
    const std::int64_t hi = std::min(a.end, b.end);
    const std::int64_t inter = std::max<std::int64_t>(0, hi - lo + 1);
    const std::int64_t len_a = a.end - a.begin + 1;
    const std::int64_t len_b = b.end - b.begin + 1;
    const std::int64_t uni = len_a + len_b - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

bool hypothesis_before(const SpanHypothesis& a, const SpanHypothesis& b) {
    if (a.joint_score != b.joint_score) return a.joint_score > b.joint_score;
    if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
    return (a.span.end - a.span.begin) < (b.span.end - b.span.begin);
}

}  // namespace

std::vector<SpanHypothesis> enumerate_candidates(const Tensor& marginals, const Tensor& p_start,
                                                 const Tensor& p_end, const DecodeConfig& cfg) {
    if (marginals.rank() != 2 || marginals.cols() != kTags)
        throw ContractError("enumerate_candidates: marginals must be (T x 3)");
    const std::int64_t T = marginals.rows();
    if (p_start.rank() != 1 || p_start.dim(0) != T || p_end.rank() != 1 || p_end.dim(0) != T)
        throw ContractError("enumerate_candidates: pointer probabilities must be length-T vectors");
    if (cfg.max_span_len < 1) throw ContractError("enumerate_candidates: max span length must be >= 1");
    if (cfg.phi < 0.0) throw ContractError("enumerate_candidates: phi must be non-negative");

    auto safe_log = [](double p) { return std::log(std::max(kProbFloor, p)); };
    std::vector<double> log_pi(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t)
        log_pi[static_cast<std::size_t>(t)] =
            safe_log(marginals.at(t, static_cast<std::int64_t>(Tag::B)) +
                     marginals.at(t, static_cast<std::int64_t>(Tag::I)));

    std::vector<SpanHypothesis> out;
    for (std::int64_t b = 0; b < T; ++b) {
        double evidence = 0.0;
        const std::int64_t last = std::min<std::int64_t>(T - 1, b + cfg.max_span_len - 1);
        for (std::int64_t e = b; e <= last; ++e) {
            evidence += log_pi[static_cast<std::size_t>(e)];
            SpanHypothesis h;
            h.span = Span{0, b, e};
            h.crf_evidence = evidence;
            h.log_p_start = safe_log(p_start[b]);
            h.log_p_end = safe_log(p_end[e]);
            h.joint_score = evidence + cfg.phi * (h.log_p_start + h.log_p_end);
            if (h.joint_score >= cfg.min_joint_score) out.push_back(h);
        }
    }
    std::sort(out.begin(), out.end(), hypothesis_before);
    if (cfg.max_candidates >= 0 && static_cast<std::int64_t>(out.size()) > cfg.max_candidates)
        out.resize(static_cast<std::size_t>(cfg.max_candidates));
    return out;
}

std::vector<SpanHypothesis> nms(std::vector<SpanHypothesis> candidates, double delta_nms) {
    if (delta_nms <= 0.0 || delta_nms > 1.0)
        throw ContractError("nms: delta must lie in (0, 1]");
    std::sort(candidates.begin(), candidates.end(), hypothesis_before);
    std::vector<SpanHypothesis> kept;
    for (const SpanHypothesis& h : candidates) {
        bool suppressed = false;
        for (const SpanHypothesis& k : kept) {
            if (h.span.paragraph == k.span.paragraph && span_iou(h.span, k.span) >= delta_nms) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(h);
    }
    return kept;
}

}  // namespace spanforge
