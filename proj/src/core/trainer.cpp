#include "core/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "core/logging.hpp"
#include "core/strings.hpp"

namespace spanforge {

using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

// ---- config -------------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2 (pair sampling needs peers)");
    if (!(lr > 0.0)) throw ValidationError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    model.validate();
    if (decode.max_span_len < 1) throw ValidationError("decode.max_span_len must be >= 1");
    if (decode.max_candidates < 1) throw ValidationError("decode.max_candidates must be >= 1");
    if (!(decode.delta_nms > 0.0 && decode.delta_nms <= 1.0))
        throw ValidationError("decode.delta_nms must lie in (0, 1]");
    if (!(decode.phi >= 0.0)) throw ValidationError("decode.phi must be >= 0");
}

static std::string bool_text(bool b) { return b ? "true" : "false"; }

static bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ValidationError("invalid boolean '" + v + "' for " + key);
}

std::string TrainConfig::canonical_text() const {
    std::vector<std::pair<std::string, std::string>> kv;
    auto put = [&](const char* k, std::string v) { kv.emplace_back(k, std::move(v)); };
    put("batch_size", std::to_string(batch_size));
    put("decode.delta_nms", format_double(decode.delta_nms));
    put("decode.max_candidates", std::to_string(decode.max_candidates));
    put("decode.max_span_len", std::to_string(decode.max_span_len));
    put("decode.min_joint_score", format_double(decode.min_joint_score));
    put("decode.phi", format_double(decode.phi));
    put("epochs", std::to_string(epochs));
    put("lr", format_double(lr));
    put("model.aggregator", model.aggregator.name());
    put("model.consistency_training", bool_text(model.consistency_training));
    put("model.contrastive.alpha", format_double(model.contrastive.alpha));
    put("model.contrastive.lambda_sep", format_double(model.contrastive.lambda_sep));
    put("model.contrastive.negative_cap", std::to_string(model.contrastive.negative_cap));
    put("model.contrastive.tau", format_double(model.contrastive.temperature));
    put("model.contrastive.with_positive", bool_text(model.contrastive.with_positive));
    put("model.embed_dim", std::to_string(model.embed_dim));
    put("model.gamma", format_double(model.gamma));
    put("model.gat_dropout", format_double(model.gat_dropout));
    put("model.gat_heads", std::to_string(model.gat_heads));
    put("model.gat_layers", std::to_string(model.gat_layers));
    put("model.hash_seed", std::to_string(model.hash_seed));
    put("model.hidden", std::to_string(model.hidden));
    put("model.leaky_slope", format_double(model.leaky_slope));
    put("model.proto_min_support", std::to_string(model.proto_min_support));
    put("model.proto_rho", format_double(model.proto_rho));
    put("model.smoothing.beta", format_double(model.smoothing.beta));
    put("model.smoothing.iterations", std::to_string(model.smoothing.iterations));
    put("model.use_contrastive", bool_text(model.use_contrastive));
    put("model.use_graph", bool_text(model.use_graph));
    put("model.zeta", format_double(model.zeta));
    put("seed", std::to_string(seed));
    put("weight_decay", format_double(weight_decay));
    std::sort(kv.begin(), kv.end());
    std::string out;
    for (auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

bool TrainConfig::apply_key(const std::string& k, const std::string& v) {
    if (k == "batch_size") batch_size = parse_int(v, k);
    else if (k == "decode.delta_nms") decode.delta_nms = parse_double(v, k);
    else if (k == "decode.max_candidates") decode.max_candidates = parse_int(v, k);
    else if (k == "decode.max_span_len") decode.max_span_len = parse_int(v, k);
    else if (k == "decode.min_joint_score") decode.min_joint_score = parse_double(v, k);
    else if (k == "decode.phi") decode.phi = parse_double(v, k);
    else if (k == "epochs") epochs = parse_int(v, k);
    else if (k == "lr") lr = parse_double(v, k);
    else if (k == "model.aggregator") model.aggregator = AggregatorKind::parse(v);
    else if (k == "model.consistency_training") model.consistency_training = parse_bool(v, k);
    else if (k == "model.contrastive.alpha") model.contrastive.alpha = parse_double(v, k);
    else if (k == "model.contrastive.lambda_sep") model.contrastive.lambda_sep = parse_double(v, k);
    else if (k == "model.contrastive.negative_cap") model.contrastive.negative_cap = parse_int(v, k);
    else if (k == "model.contrastive.tau") model.contrastive.temperature = parse_double(v, k);
    else if (k == "model.contrastive.with_positive") model.contrastive.with_positive = parse_bool(v, k);
    else if (k == "model.embed_dim") model.embed_dim = parse_int(v, k);
    else if (k == "model.gamma") model.gamma = parse_double(v, k);
    else if (k == "model.gat_dropout") model.gat_dropout = parse_double(v, k);
    else if (k == "model.gat_heads") model.gat_heads = parse_int(v, k);
    else if (k == "model.gat_layers") model.gat_layers = parse_int(v, k);
    else if (k == "model.hash_seed") model.hash_seed = static_cast<std::uint64_t>(parse_int(v, k));
    else if (k == "model.hidden") model.hidden = parse_int(v, k);
    else if (k == "model.leaky_slope") model.leaky_slope = parse_double(v, k);
    else if (k == "model.proto_min_support") model.proto_min_support = parse_int(v, k);
    else if (k == "model.proto_rho") model.proto_rho = parse_double(v, k);
    else if (k == "model.smoothing.beta") model.smoothing.beta = parse_double(v, k);
    else if (k == "model.smoothing.iterations") model.smoothing.iterations = parse_int(v, k);
    else if (k == "model.use_contrastive") model.use_contrastive = parse_bool(v, k);
    else if (k == "model.use_graph") model.use_graph = parse_bool(v, k);
    else if (k == "model.zeta") model.zeta = parse_double(v, k);
    else if (k == "seed") seed = static_cast<std::uint64_t>(parse_int(v, k));
    else if (k == "weight_decay") weight_decay = parse_double(v, k);
    else return false;
    return true;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    for (const std::string& raw : split(text, '\n')) {
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ValidationError("config line without '=': " + std::string(line));
        std::string k(trim(line.substr(0, eq)));
        std::string v(trim(line.substr(eq + 1)));
        if (!cfg.apply_key(k, v)) throw ValidationError("unknown config key '" + k + "'");
    }
    return cfg;
}

// ---- loss assembly -----------------------------------------------------------

static void check_component(const char* name, const Var& v) {
    const Tensor& t = v.val();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (std::isnan(t[i])) throw PipelineError(std::string("total loss component ") + name + " is NaN");
}

Var total_loss(Graph& g, Var l_crf, Var l_ptr, std::optional<Var> l_inst, std::optional<Var> l_clu,
               double alpha, std::optional<Var> l_pc, double zeta) {
    check_component("L_CRF", l_crf);
    check_component("L_ptr", l_ptr);
    Var total = numcore::add(l_crf, l_ptr);
    if (l_inst) {
        check_component("L_inst", *l_inst);
        total = numcore::add(total, *l_inst);
    }
    if (l_clu) {
        check_component("L_clu", *l_clu);
        total = numcore::add(total, numcore::scale(*l_clu, alpha));
    }
    if (l_pc) {
        check_component("L_pc", *l_pc);
        total = numcore::add(total, numcore::scale(*l_pc, zeta));
    }
    (void)g;
    return total;
}

// ---- item pool and batching -----------------------------------------------------

std::vector<TrainItem> collect_items(const Corpus& corpus) {
    std::vector<TrainItem> items;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        const Document& doc = corpus[d];
        for (std::size_t p = 0; p < doc.paragraphs.size(); ++p) {
            const Paragraph& para = doc.paragraphs[p];
            if (!para.labeled || para.tokens.empty()) continue;
            TrainItem it;
            it.doc = static_cast<std::int64_t>(d);
            it.para = static_cast<std::int64_t>(p);
            it.tag.role = doc.sections[static_cast<std::size_t>(para.section_id)].name;
            it.tag.source = para.gold_spans.empty() ? 0 : 1;
            items.push_back(std::move(it));
        }
    }
    return items;
}

// Stratified batches: shuffle within each (role, source) stratum, then deal
// two at a time round-robin so every batch mixes roles and sources but pair
// sampling still finds same-group positives. A trailing singleton folds into
// the previous batch.
static std::vector<std::vector<TrainItem>> make_batches(const std::vector<TrainItem>& items,
                                                        std::int64_t batch_size, Rng& rng) {
    std::map<std::pair<std::string, int>, std::vector<TrainItem>> strata;
    for (const TrainItem& it : items) strata[{it.tag.role, it.tag.source}].push_back(it);
    std::vector<std::vector<TrainItem>> lists;
    for (auto& [key, list] : strata) {
        rng.shuffle(list);
        lists.push_back(std::move(list));
    }
    std::vector<std::size_t> cursor(lists.size(), 0);
    std::vector<TrainItem> stream;
    stream.reserve(items.size());
    bool moved = true;
    while (moved) {
        moved = false;
        for (std::size_t l = 0; l < lists.size(); ++l) {
            for (int take = 0; take < 2 && cursor[l] < lists[l].size(); ++take) {
                stream.push_back(lists[l][cursor[l]++]);
                moved = true;
            }
        }
    }
    std::vector<std::vector<TrainItem>> batches;
    for (std::size_t i = 0; i < stream.size(); i += static_cast<std::size_t>(batch_size)) {
        std::size_t hi = std::min(stream.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(i),
                             stream.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    if (batches.size() >= 2 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    return batches;
}

// ---- batch forward ---------------------------------------------------------------

LossParts batch_loss(DetectorModel& model, const Corpus& corpus, std::span<const TrainItem> items,
                     Graph& g, bool training, Rng& rng) {
    if (items.empty()) throw ContractError("batch_loss: empty batch");
    const ModelConfig& mc = model.config();

    // Encode each document once (ascending doc index keeps dropout draws stable).
    std::map<std::int64_t, DocumentEncoding> encoded;
    for (const TrainItem& it : items) {
        if (it.doc < 0 || it.doc >= static_cast<std::int64_t>(corpus.size()))
            throw ContractError("batch_loss: item references a document outside the corpus");
        (void)encoded[it.doc];
    }
    for (auto& [d, enc] : encoded)
        enc = encode_document(model, corpus[static_cast<std::size_t>(d)], g, training, &rng);

    Var v_trans = g.param(model.crf().transitions);
    Var v_start = g.param(model.crf().start);
    Var v_emit = g.param(model.emit_w());

    std::vector<Var> crf_terms, ptr_terms, anchors;
    std::vector<Var> emissions_per_item;
    crf_terms.reserve(items.size());
    ptr_terms.reserve(items.size());
    anchors.reserve(items.size());
    for (const TrainItem& it : items) {
        const Document& doc = corpus[static_cast<std::size_t>(it.doc)];
        const Paragraph& para = doc.paragraphs[static_cast<std::size_t>(it.para)];
        const DocumentEncoding& enc = encoded[it.doc];
        Var feats = token_features(model, doc, enc, it.para, g);
        Var emissions = numcore::matmul(feats, v_emit);
        std::vector<Tag> gold = bio_from_spans(para.size(), para.gold_spans);
        crf_terms.push_back(crf_nll(emissions, v_trans, v_start, gold));
        PointerLogits pl = pointer_logits(feats, model.pointer(), g);
        ptr_terms.push_back(pointer_loss(pl, para.gold_spans));
        anchors.push_back(numcore::row(enc.styled, it.para));
        emissions_per_item.push_back(emissions);
    }

    LossParts parts;
    Var l_crf = numcore::mean(numcore::pack(crf_terms));
    Var l_ptr = numcore::mean(numcore::pack(ptr_terms));

    std::optional<Var> l_inst, l_clu, l_pc;
    if (mc.use_contrastive) {
        std::vector<GroupTag> tags;
        tags.reserve(items.size());
        for (const TrainItem& it : items) tags.push_back(it.tag);
        AnchorPairs pairs = pair_sampler(tags, mc.contrastive.negative_cap, rng);
        if (!pairs.anchor.empty()) {
            std::vector<Var> terms;
            for (std::size_t k = 0; k < pairs.anchor.size(); ++k) {
                std::vector<Var> negs;
                for (std::int64_t j : pairs.negatives[k]) negs.push_back(anchors[static_cast<std::size_t>(j)]);
                terms.push_back(info_nce(anchors[static_cast<std::size_t>(pairs.anchor[k])],
                                         anchors[static_cast<std::size_t>(pairs.positive[k])], negs,
                                         mc.contrastive.temperature, mc.contrastive.with_positive));
            }
            l_inst = numcore::mean(numcore::pack(terms));
            parts.instance_anchors = static_cast<std::int64_t>(terms.size());
        }

        if (training) {
            // EMA refresh from detached embeddings; the cluster loss below
            // pulls toward the refreshed centroids.
            std::map<std::pair<std::string, int>, GroupUpdate> groups;
            for (std::size_t i = 0; i < items.size(); ++i) {
                auto key = std::make_pair(items[i].tag.role, items[i].tag.source);
                auto [pos, fresh] = groups.try_emplace(key);
                if (fresh) {
                    pos->second.role = key.first;
                    pos->second.source = key.second;
                }
                pos->second.embeddings.push_back(anchors[i].val());
            }
            std::vector<GroupUpdate> flat;
            flat.reserve(groups.size());
            for (auto& [key, gu] : groups) flat.push_back(std::move(gu));
            update_prototypes(model.bank(), flat);
        }

        std::vector<Var> cterms;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (!model.bank().pair_ready(items[i].tag.role)) continue;
            cterms.push_back(cluster_loss(anchors[i], model.bank(), items[i].tag.role,
                                          items[i].tag.source, mc.contrastive.lambda_sep));
        }
        if (!cterms.empty()) l_clu = numcore::mean(numcore::pack(cterms));
    }

    if (mc.consistency_training) {
        // Differentiable penalty uses the mean inside-probability regardless
        // of the inference-time aggregator (max/topk are not smooth).
        std::vector<Var> p_ai_terms, agg_terms;
        for (std::size_t i = 0; i < items.size(); ++i) {
            p_ai_terms.push_back(numcore::sigmoid(paragraph_logit(anchors[i], model.phead(), g)));
            Var marg = crf_marginals_graph(emissions_per_item[i], v_trans, v_start);
            std::int64_t T = marg.val().dim(0);
            std::vector<std::int64_t> idx;
            idx.reserve(static_cast<std::size_t>(2 * T));
            for (std::int64_t t = 0; t < T; ++t) {
                idx.push_back(t * 3 + 1);
                idx.push_back(t * 3 + 2);
            }
            agg_terms.push_back(numcore::scale(numcore::sum(numcore::gather(marg, idx)),
                                               1.0 / static_cast<double>(T)));
        }
        l_pc = consistency_penalty_graph(numcore::pack(p_ai_terms), numcore::pack(agg_terms));
    }

    parts.total = total_loss(g, l_crf, l_ptr, l_inst, l_clu, mc.contrastive.alpha, l_pc, mc.zeta);
    parts.crf = l_crf.val()[0];
    parts.ptr = l_ptr.val()[0];
    parts.inst = l_inst ? (*l_inst).val()[0] : 0.0;
    parts.clu = l_clu ? (*l_clu).val()[0] : 0.0;
    parts.pc = l_pc ? (*l_pc).val()[0] : 0.0;
    if (!std::isfinite(parts.total.val()[0]))
        throw PipelineError("total loss is non-finite: " + format_double(parts.total.val()[0]));
    return parts;
}

// ---- checkpoint serialization -----------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'P', 'F', 'G', 'C', 'K', 'P', 'T'};

void put_u32(std::string& buf, std::uint32_t x) { buf.append(reinterpret_cast<const char*>(&x), 4); }
void put_u64(std::string& buf, std::uint64_t x) { buf.append(reinterpret_cast<const char*>(&x), 8); }
void put_i64(std::string& buf, std::int64_t x) { buf.append(reinterpret_cast<const char*>(&x), 8); }
void put_f64(std::string& buf, double x) { buf.append(reinterpret_cast<const char*>(&x), 8); }
void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}
void put_tensor(std::string& buf, const Tensor& t) {
    put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t i = 0; i < t.rank(); ++i) put_u64(buf, static_cast<std::uint64_t>(t.dim(i)));
    for (std::int64_t i = 0; i < t.numel(); ++i) put_f64(buf, t[i]);
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw PipelineError("checkpoint parse ran past end of data");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t x;
        std::memcpy(&x, buf.data() + pos, 4);
        pos += 4;
        return x;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t x;
        std::memcpy(&x, buf.data() + pos, 8);
        pos += 8;
        return x;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() {
        need(8);
        double x;
        std::memcpy(&x, buf.data() + pos, 8);
        pos += 8;
        return x;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        std::uint32_t rank = u32();
        if (rank > 2) throw PipelineError("checkpoint tensor rank out of range");
        std::vector<std::int64_t> dims;
        std::int64_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            dims.push_back(i64());
            if (dims.back() < 0 || dims.back() > (1 << 24))
                throw PipelineError("checkpoint tensor dimension out of range");
            numel *= dims.back();
        }
        Tensor t = rank == 0   ? Tensor::scalar(0.0)
                   : rank == 1 ? Tensor::zeros({dims[0]})
                               : Tensor::zeros({dims[0], dims[1]});
        for (std::int64_t i = 0; i < numel; ++i) t[i] = f64();
        return t;
    }
};

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, ckpt.version);
    put_u64(buf, fnv1a64(ckpt.config_text));
    put_str(buf, ckpt.config_text);
    put_u32(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_str(buf, name);
        put_tensor(buf, t);
    }
    put_u32(buf, static_cast<std::uint32_t>(ckpt.prototypes.size()));
    for (const PrototypeBank::Entry& e : ckpt.prototypes) {
        put_str(buf, e.role);
        put_u32(buf, static_cast<std::uint32_t>(e.source));
        put_u64(buf, static_cast<std::uint64_t>(e.centroid.numel()));
        for (std::int64_t i = 0; i < e.centroid.numel(); ++i) put_f64(buf, e.centroid[i]);
        put_i64(buf, e.absorbed);
    }
    put_u64(buf, fnv1a64(buf));
    return buf;
}

Checkpoint decode_checkpoint(const std::string& buf, const std::string& where) {
    if (buf.size() < sizeof(kMagic) + 8)
        throw PipelineError(where + ": checkpoint shorter than header + digest");
    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (fnv1a64(buf.data(), buf.size() - 8) != stored)
        throw PipelineError(where + ": checkpoint content digest mismatch (file truncated or corrupt)");
    Cursor c{buf};
    c.need(sizeof(kMagic));
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw PipelineError(where + ": not a checkpoint file (bad magic)");
    c.pos = sizeof(kMagic);
    Checkpoint ckpt;
    ckpt.version = c.u32();
    if (ckpt.version != 1)
        throw PipelineError(where + ": unsupported checkpoint version " + std::to_string(ckpt.version));
    std::uint64_t cfg_digest = c.u64();
    ckpt.config_text = c.str();
    if (fnv1a64(ckpt.config_text) != cfg_digest)
        throw PipelineError(where + ": checkpoint config digest mismatch");
    std::uint32_t n_tensors = c.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = c.str();
        Tensor t = c.tensor();
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    std::uint32_t n_protos = c.u32();
    for (std::uint32_t i = 0; i < n_protos; ++i) {
        PrototypeBank::Entry e;
        e.role = c.str();
        e.source = static_cast<int>(c.u32());
        std::uint64_t dim = c.u64();
        if (dim > (1u << 24)) throw PipelineError(where + ": checkpoint prototype dimension out of range");
        e.centroid = Tensor::zeros({static_cast<std::int64_t>(dim)});
        for (std::uint64_t j = 0; j < dim; ++j) e.centroid[static_cast<std::int64_t>(j)] = c.f64();
        e.absorbed = c.i64();
        ckpt.prototypes.push_back(std::move(e));
    }
    if (c.pos != buf.size() - 8) throw PipelineError(where + ": trailing bytes in checkpoint");
    return ckpt;
}

}  // namespace

Checkpoint snapshot(DetectorModel& model, const TrainConfig& cfg) {
    Checkpoint ckpt;
    ckpt.config_text = cfg.canonical_text();
    for (Parameter* p : model.named_parameters()) ckpt.tensors.emplace_back(p->name, p->value);
    ckpt.prototypes = model.bank().entries();
    return ckpt;
}

void restore(DetectorModel& model, const Checkpoint& ckpt) {
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : model.named_parameters()) by_name[p->name] = p;
    if (by_name.size() != ckpt.tensors.size())
        throw PipelineError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                            " tensors but the model has " + std::to_string(by_name.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        auto pos = by_name.find(name);
        if (pos == by_name.end()) throw PipelineError("checkpoint tensor '" + name + "' has no model slot");
        Parameter* p = pos->second;
        if (p->value.rank() != t.rank() || p->value.numel() != t.numel())
            throw PipelineError("checkpoint tensor '" + name + "' shape mismatch");
        for (std::int64_t i = 0; i < p->value.rank(); ++i)
            if (p->value.dim(i) != t.dim(i))
                throw PipelineError("checkpoint tensor '" + name + "' shape mismatch");
        p->value = t;
        p->grad = Tensor::zeros(t.shape());
    }
    const ModelConfig& mc = model.config();
    model.bank() = PrototypeBank(mc.styled_dim(), mc.proto_rho, mc.proto_min_support);
    for (const PrototypeBank::Entry& e : ckpt.prototypes) {
        if (e.centroid.numel() != mc.styled_dim())
            throw PipelineError("checkpoint prototype '" + e.role + "' dimension mismatch");
        model.bank().restore(e);
    }
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
    TrainConfig cfg = TrainConfig::from_text(ckpt.config_text);
    cfg.validate();
    return cfg;
}

DetectorModel model_from_checkpoint(const Checkpoint& ckpt) {
    TrainConfig cfg = config_from_checkpoint(ckpt);
    DetectorModel model(cfg.model, Rng::stream(cfg.seed, "init"));
    restore(model, ckpt);
    return model;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string buf = encode_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open '" + path + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    f.flush();
    if (!f.good()) throw PipelineError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str(), "'" + path + "'");
}

std::uint64_t checkpoint_digest(const Checkpoint& ckpt) { return fnv1a64(encode_checkpoint(ckpt)); }

// ---- paragraph head fit ------------------------------------------------------------

void fit_paragraph_head(DetectorModel& model, const Corpus& corpus, std::int64_t steps, double lr) {
    std::vector<Tensor> feats;
    std::vector<double> labels;
    for (const Document& doc : corpus) {
        Graph g;
        DocumentEncoding enc = encode_document(model, doc, g, false, nullptr);
        for (std::size_t p = 0; p < doc.paragraphs.size(); ++p) {
            const Paragraph& para = doc.paragraphs[p];
            if (!para.labeled || para.tokens.empty()) continue;
            feats.push_back(numcore::row(enc.styled, static_cast<std::int64_t>(p)).val());
            labels.push_back(para.gold_spans.empty() ? 0.0 : 1.0);
        }
    }
    if (feats.empty()) {
        logging::warnf("%s", "paragraph head fit skipped: no labeled paragraphs");
        return;
    }
    numcore::AdamW opt({lr, 0.9, 0.999, 1e-8, 0.0});
    std::vector<Parameter*> params = {&model.phead().weight, &model.phead().bias};
    for (std::int64_t s = 0; s < steps; ++s) {
        Graph g;
        std::vector<Var> terms;
        terms.reserve(feats.size());
        for (std::size_t i = 0; i < feats.size(); ++i) {
            Var logit = paragraph_logit(g.constant(feats[i]), model.phead(), g);
            terms.push_back(numcore::bce_with_logit(logit, labels[i]));
        }
        Var loss = numcore::mean(numcore::pack(terms));
        opt.zero_grad(params);
        g.backward(loss);
        opt.step(params);
    }
}

// ---- training loop ------------------------------------------------------------------

TrainResult train(const Corpus& train_docs, const Corpus& val_docs, const TrainConfig& cfg) {
    cfg.validate();
    for (const Document& doc : train_docs) validate_document(doc);
    for (const Document& doc : val_docs) validate_document(doc);

    DetectorModel model(cfg.model, Rng::stream(cfg.seed, "init"));
    std::vector<TrainItem> train_items = collect_items(train_docs);
    std::vector<TrainItem> val_items = collect_items(val_docs);
    if (train_items.empty()) throw ValidationError("training corpus has no labeled non-empty paragraphs");

    numcore::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    std::vector<Parameter*> params = model.trainable(cfg.model.consistency_training);

    Rng batch_root = Rng::stream(cfg.seed, "batching");
    Rng step_root = Rng::stream(cfg.seed, "steps");

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    result.best = snapshot(model, cfg);  // last-good fallback if epoch 1 diverges

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng brng = batch_root.substream("e" + std::to_string(epoch));
        Rng srng = step_root.substream("e" + std::to_string(epoch));
        std::vector<std::vector<TrainItem>> batches = make_batches(train_items, cfg.batch_size, brng);

        double train_sum = 0.0;
        std::int64_t train_n = 0;
        try {
            for (const std::vector<TrainItem>& batch : batches) {
                Graph g;
                g.set_nan_check(true);
                LossParts parts = batch_loss(model, train_docs, batch, g, true, srng);
                opt.zero_grad(params);
                g.backward(parts.total);
                opt.step(params);
                train_sum += parts.total.val()[0] * static_cast<double>(batch.size());
                train_n += static_cast<std::int64_t>(batch.size());
            }

            double val_sum = 0.0;
            std::int64_t val_n = 0;
            // Fresh pair stream each epoch: validation losses stay comparable.
            Rng vrng = Rng::stream(cfg.seed, "valpairs");
            for (std::size_t i = 0; i < val_items.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
                std::size_t hi = std::min(val_items.size(), i + static_cast<std::size_t>(cfg.batch_size));
                std::span<const TrainItem> chunk(val_items.data() + i, hi - i);
                Graph g;
                g.set_nan_check(true);
                LossParts parts = batch_loss(model, val_docs, chunk, g, false, vrng);
                val_sum += parts.total.val()[0] * static_cast<double>(chunk.size());
                val_n += static_cast<std::int64_t>(chunk.size());
            }

            EpochLog entry;
            entry.epoch = epoch + 1;
            entry.train_loss = train_n > 0 ? train_sum / static_cast<double>(train_n) : 0.0;
            entry.val_loss = val_n > 0 ? val_sum / static_cast<double>(val_n) : entry.train_loss;
            result.log.push_back(entry);
            logging::infof("epoch %lld/%lld train_loss=%s val_loss=%s",
                           static_cast<long long>(entry.epoch), static_cast<long long>(cfg.epochs),
                           format_double(entry.train_loss).c_str(), format_double(entry.val_loss).c_str());

            if (entry.val_loss < result.best_val_loss) {
                result.best_val_loss = entry.val_loss;
                result.best_epoch = entry.epoch;
                result.best = snapshot(model, cfg);
            }
        } catch (const PipelineError& e) {
            logging::warnf("training diverged at epoch %lld: %s; keeping last good checkpoint",
                           static_cast<long long>(epoch + 1), e.what());
            result.diverged = true;
            break;
        } catch (const ContractError& e) {
            // Exploded parameters surface as numeric contract violations
            // (zero-norm embeddings, out-of-range probabilities) before the
            // NaN guard fires; same remedy.
            logging::warnf("training diverged at epoch %lld: %s; keeping last good checkpoint",
                           static_cast<long long>(epoch + 1), e.what());
            result.diverged = true;
            break;
        }
    }

    restore(model, result.best);
    if (!cfg.model.consistency_training) {
        // The main loop never touches the paragraph head; fit it on the
        // frozen styled vectors of the best model.
        fit_paragraph_head(model, train_docs);
    }
    result.best = snapshot(model, cfg);
    return result;
}

}  // namespace spanforge
