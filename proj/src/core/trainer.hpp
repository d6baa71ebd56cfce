#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/optimizer.hpp"

namespace spanforge {

struct TrainConfig {
    std::int64_t epochs = 10;
    std::int64_t batch_size = 16;
    double lr = 1e-3;  // desk-scale default; transformer-backbone runs want ~2e-5
    double weight_decay = 0.01;
    std::uint64_t seed = 1234;
    ModelConfig model;
    DecodeConfig decode;

    void validate() const;
    // Flat sorted key=value snapshot; the checkpoint digest covers it.
    std::string canonical_text() const;
    static TrainConfig from_text(const std::string& text);
    // Applies one key=value pair; false when the key is not a trainer key.
    bool apply_key(const std::string& key, const std::string& value);
};

// Total training objective: L_CRF + L_ptr + L_inst + alpha*L_clu (+ zeta*L_pc).
// Missing optional parts contribute zero. NaN components abort by name.
numcore::Var total_loss(numcore::Graph& g, numcore::Var l_crf, numcore::Var l_ptr,
                        std::optional<numcore::Var> l_inst, std::optional<numcore::Var> l_clu,
                        double alpha, std::optional<numcore::Var> l_pc, double zeta);

// One labeled paragraph in the training pool.
struct TrainItem {
    std::int64_t doc = 0;
    std::int64_t para = 0;
    GroupTag tag;  // (section role, contains-AI)
};

std::vector<TrainItem> collect_items(const Corpus& corpus);

struct LossParts {
    numcore::Var total;
    double crf = 0.0, ptr = 0.0, inst = 0.0, clu = 0.0, pc = 0.0;
    std::int64_t instance_anchors = 0;
};

// Forward pass over one batch. Training mode enables attention dropout and
// refreshes the prototype bank from the batch embeddings (Algorithm order:
// instance loss sees the old bank, cluster loss the refreshed one).
LossParts batch_loss(DetectorModel& model, const Corpus& corpus, std::span<const TrainItem> items,
                     numcore::Graph& g, bool training, Rng& rng);

struct EpochLog {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::string config_text;
    std::vector<std::pair<std::string, numcore::Tensor>> tensors;  // sorted by name
    std::vector<PrototypeBank::Entry> prototypes;
};

Checkpoint snapshot(DetectorModel& model, const TrainConfig& cfg);
// Loads tensors by name into an existing model (shapes must match) and
// replaces the prototype bank contents.
void restore(DetectorModel& model, const Checkpoint& ckpt);
// Rebuilds a model from the checkpoint's own config snapshot.
DetectorModel model_from_checkpoint(const Checkpoint& ckpt);
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
// Digest of the serialized form (determinism checks).
std::uint64_t checkpoint_digest(const Checkpoint& ckpt);

struct TrainResult {
    Checkpoint best;
    std::vector<EpochLog> log;
    bool diverged = false;
    double best_val_loss = 0.0;
    std::int64_t best_epoch = -1;
};

// Algorithm-style loop: stratified batches, contrastive + CRF + pointer
// losses, AdamW, best-validation checkpoint. The paragraph head is fitted
// post-hoc on the training split unless consistency training already pulled
// it into the loop. Fully deterministic given cfg.seed.
TrainResult train(const Corpus& train_docs, const Corpus& val_docs, const TrainConfig& cfg);

// Supervised BCE fit of P_ai on frozen styled vectors.
void fit_paragraph_head(DetectorModel& model, const Corpus& corpus, std::int64_t steps = 150,
                        double lr = 0.1);

}  // namespace spanforge
