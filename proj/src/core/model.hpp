#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/calibration.hpp"
#include "core/consistency.hpp"
#include "core/contrastive.hpp"
#include "core/docmodel.hpp"
#include "core/rng.hpp"
#include "core/span_model.hpp"
#include "core/style_encoder.hpp"

namespace spanforge {

struct ModelConfig {
    std::int64_t embed_dim = 64;
    std::int64_t hidden = 64;
    std::int64_t gat_layers = 2;
    std::int64_t gat_heads = 1;
    double gat_dropout = 0.1;
    double leaky_slope = 0.2;
    bool use_graph = true;        // ablation: false bypasses the attention stack
    bool use_contrastive = true;  // ablation: false drops L_inst and L_clu
    bool consistency_training = false;  // adds zeta * L_pc to the loss
    double zeta = 0.1;
    double gamma = 0.5;  // inference-time reconcile weight
    SmoothingConfig smoothing;
    AggregatorKind aggregator;  // paragraph-token aggregation h(.)
    ContrastiveConfig contrastive;
    double proto_rho = 0.05;
    std::int64_t proto_min_support = 4;
    std::uint64_t hash_seed = 0x5eedf00d;

    // Styled dimension: the GAT output width, or the raw width when bypassed.
    std::int64_t styled_dim() const { return use_graph ? hidden : embed_dim; }
    // Token representation: [current ‖ previous ‖ next ‖ styled]. The one-token
    // context window is what lets the pointer heads see boundaries (a span
    // start looks like "AI-vocab token after a human-vocab token"); hashed
    // per-token vectors alone carry no positional signal.
    std::int64_t token_feat_dim() const { return 3 * embed_dim + styled_dim(); }
    void validate() const;
};

// Everything trainable plus the prototype memory, under stable addresses.
class DetectorModel {
public:
    DetectorModel(ModelConfig cfg, Rng init_rng);

    const ModelConfig& config() const { return cfg_; }
    EmbeddingProvider& provider() { return *provider_; }
    const EmbeddingProvider& provider() const { return *provider_; }
    void set_provider(std::unique_ptr<EmbeddingProvider> p);

    FusionWeights& fusion() { return fusion_; }
    std::vector<GatLayer>& gat() { return gat_; }
    numcore::Parameter& emit_w() { return emit_w_; }
    CrfParams& crf() { return crf_; }
    PointerParams& pointer() { return pointer_; }
    ParagraphHead& phead() { return phead_; }
    PrototypeBank& bank() { return bank_; }
    const PrototypeBank& bank() const { return bank_; }

    // Main-loss parameters (the paragraph head trains separately unless
    // consistency training pulls it into the loop).
    std::vector<numcore::Parameter*> trainable(bool include_phead);
    // All parameters, checkpoint order (sorted by name).
    std::vector<numcore::Parameter*> named_parameters();

private:
    ModelConfig cfg_;
    std::unique_ptr<EmbeddingProvider> provider_;
    FusionWeights fusion_;
    std::deque<numcore::Parameter> gat_store_;
    std::vector<GatLayer> gat_;
    numcore::Parameter emit_w_;
    CrfParams crf_;
    PointerParams pointer_;
    ParagraphHead phead_;
    PrototypeBank bank_;
};

// One encoded document: fused paragraph vectors and their styled (graph-
// contextual) counterparts, on the caller's tape.
struct DocumentEncoding {
    DocGraph graph;
    numcore::Var fused;   // (P x embed_dim)
    numcore::Var styled;  // (P x styled_dim), h-tilde
};

DocumentEncoding encode_document(DetectorModel& model, const Document& doc, numcore::Graph& g,
                                 bool training, Rng* dropout_rng);

// (T x (3*embed+styled)) token features for one paragraph: each row is the
// token's own vector, its neighbors' vectors (zeros at paragraph edges), and
// the paragraph's styled vector.
numcore::Var token_features(DetectorModel& model, const Document& doc, const DocumentEncoding& enc,
                            std::int64_t para, numcore::Graph& g);

// ---- decode -----------------------------------------------------------------------

struct ParagraphDecode {
    double p_ai = 0.5;          // paragraph head, raw
    double p_agg = 0.0;         // aggregated token inside-probability
    double p_reconciled = 0.0;  // convex fusion of the two
    double p_smoothed = 0.0;    // after graph smoothing
    bool skipped_empty = false;
    std::vector<SpanHypothesis> spans;  // sorted by begin; never cross paragraphs
};

struct DocumentDecode {
    std::string doc_id;
    std::vector<ParagraphDecode> paragraphs;
};

// Full-document inference. Confidence/temperature are optional post-hoc
// stages; when present every surviving span carries q and q'.
DocumentDecode decode_document(DetectorModel& model, const Document& doc, const DecodeConfig& dcfg,
                               const ConfidenceParams* confidence, const TemperatureModel* temperature);

}  // namespace spanforge
