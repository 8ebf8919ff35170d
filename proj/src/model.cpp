#include "moeleak/model.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "moeleak/errors.hpp"
#include "moeleak/kernels.hpp"

namespace moeleak {

void ModelConfig::validate() const {
  if (depth < 1) throw ConfigError("model depth D must be >= 1");
  if (depth * experts > 64) throw ConfigError("routing paths are limited to N * D <= 64 bits");
  if (experts < 1) throw ConfigError("experts per layer N must be >= 1");
  if (hidden < 4) throw ConfigError("hidden dimension d must be >= 4");
  if (ffn_hidden < 1) throw ConfigError("expert width must be >= 1");
  if (vocab_size < vocab::kFirstOpaque) {
    throw ConfigError("vocabulary must hold the special and guess tokens (>= " +
                      std::to_string(vocab::kFirstOpaque) + ")");
  }
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
}

RoutingPath::RoutingPath(int experts, int layers, std::uint64_t bits)
    : experts_(experts), layers_(layers), bits_(bits) {
  if (experts < 1 || layers < 1 || experts * layers > 64) {
    throw InvalidInput("routing path must have 1..64 bits");
  }
  if (experts * layers < 64) bits_ &= (std::uint64_t{1} << (experts * layers)) - 1;
}

bool RoutingPath::at(int expert, int layer) const {
  return (bits_ >> (layer * experts_ + expert)) & 1U;
}

void RoutingPath::set(int expert, int layer, bool value) {
  const std::uint64_t bit = std::uint64_t{1} << (layer * experts_ + expert);
  bits_ = value ? (bits_ | bit) : (bits_ & ~bit);
}

std::uint64_t RoutingPath::layer_mask(int layer) const {
  const std::uint64_t mask = experts_ == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << experts_) - 1;
  return (bits_ >> (layer * experts_)) & mask;
}

int RoutingPath::hamming(const RoutingPath& other) const {
  return std::popcount(bits_ ^ other.bits_);
}

Batch make_batch(std::vector<TokenSequence> sequences, std::size_t length) {
  if (sequences.empty()) throw InvalidBatch("batch must hold at least one sequence");
  std::size_t longest = 0;
  for (const auto& s : sequences) {
    if (s.empty()) throw InvalidBatch("batch sequences must be non-empty");
    longest = std::max(longest, s.size());
  }
  return Batch{std::move(sequences), std::max(length, longest)};
}

RoutingPath path_from_trace(const RouterTrace& trace, std::size_t flat_token, int experts) {
  RoutingPath path(experts, static_cast<int>(trace.size()));
  for (std::size_t layer = 0; layer < trace.size(); ++layer) {
    const std::uint64_t m = trace[layer].assignment.membership.at(flat_token);
    for (int e = 0; e < experts; ++e) path.set(e, static_cast<int>(layer), (m >> e) & 1U);
  }
  return path;
}

ModelWeights init_weights(const ModelConfig& c) {
  c.validate();
  const auto d = static_cast<std::size_t>(c.hidden);
  const auto f = static_cast<std::size_t>(c.ffn_hidden);
  std::uint64_t tensor = 0;
  auto draw = [&](std::size_t rows, std::size_t cols, double gain) {
    Matrix m = seeded_init(rows, cols, mix_seed(c.seed, tensor++));
    if (gain != 1.0) {
      for (double& v : m.data()) v *= gain;
    }
    return m;
  };

  ModelWeights w;
  w.embedding = draw(static_cast<std::size_t>(c.vocab_size), d, c.embed_gain);
  w.positions = draw(static_cast<std::size_t>(c.max_len), d, 1.0);
  for (int l = 0; l < c.depth; ++l) {
    ModelWeights::Layer layer;
    layer.wq = draw(d, d, 1.0);
    layer.wk = draw(d, d, 1.0);
    layer.wv = draw(d, d, 1.0);
    layer.wo = draw(d, d, 1.0);
    layer.gate = draw(d, static_cast<std::size_t>(c.experts), c.gate_gain);
    for (int e = 0; e < c.experts; ++e) {
      ModelWeights::Expert ex;
      ex.w1 = draw(d, f, 1.0);
      ex.w2 = draw(f, d, 1.0);
      layer.experts.push_back(std::move(ex));
    }
    w.layers.push_back(std::move(layer));
  }
  return w;
}

Model::Model(const ModelConfig& config) : config_(config), weights_(init_weights(config)) {}

Model::Model(const ModelConfig& config, ModelWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.hidden);
  if (weights_.embedding.rows() != static_cast<std::size_t>(config_.vocab_size) ||
      weights_.embedding.cols() != d ||
      weights_.layers.size() != static_cast<std::size_t>(config_.depth)) {
    throw ConfigError("weights do not match the model configuration");
  }
}

void Model::check_batch(const Batch& batch) const {
  if (batch.sequences.empty()) throw InvalidBatch("batch must hold at least one sequence");
  if (batch.length == 0) throw InvalidBatch("batch length must be positive");
  if (batch.length > static_cast<std::size_t>(config_.max_len)) {
    throw InvalidBatch("batch length exceeds the positional table");
  }
  for (const auto& s : batch.sequences) {
    if (s.empty()) throw InvalidBatch("batch sequences must be non-empty");
    if (s.size() > batch.length) throw InvalidBatch("sequence longer than the batch length");
    for (TokenId t : s) {
      if (t < 0 || t >= config_.vocab_size) throw InvalidBatch("token id out of range");
    }
  }
}

namespace {

double padding_multiplier(TokenId token, const RouterConfig& router) {
  return token == vocab::kPad ? router.padding_scale : 1.0;
}

LogitVector unembed(const Matrix& embedding, std::span<const double> h) {
  std::vector<double> u(h.size());
  kernels::rmsnorm(h, u);
  LogitVector logits(embedding.rows());
  for (std::size_t v = 0; v < embedding.rows(); ++v) {
    const auto er = embedding.row(v);
    double s = 0.0;
    for (std::size_t c = 0; c < u.size(); ++c) s += er[c] * u[c];
    logits[v] = s;
  }
  return logits;
}

}  // namespace

struct Model::Captured {
  std::size_t sequence = 0;
  std::size_t prefix_len = 0;
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
};

ForwardResult Model::run(const Batch& batch, const RouterConfig& router, bool capture_trace,
                         Captured* capture) const {
  check_batch(batch);
  const std::size_t nseq = batch.size();
  const std::size_t len = batch.length;
  const std::size_t n = nseq * len;
  const auto d = static_cast<std::size_t>(config_.hidden);
  const auto nexp = static_cast<std::size_t>(config_.experts);

  Matrix h(n, d);
  std::vector<double> multipliers(n);
  for (std::size_t s = 0; s < nseq; ++s) {
    const auto& seq = batch.sequences[s];
    for (std::size_t t = 0; t < len; ++t) {
      const TokenId tok = t < seq.size() ? seq[t] : vocab::kPad;
      const std::size_t row = s * len + t;
      const auto e = weights_.embedding.row(static_cast<std::size_t>(tok));
      const auto p = weights_.positions.row(t);
      for (std::size_t c = 0; c < d; ++c) h(row, c) = e[c] + p[c];
      multipliers[row] = padding_multiplier(tok, router);
    }
  }

  // Only final positions feed the logits, so the last MoE layer skips the
  // expert computation for every other token.
  std::vector<bool> needed_last(n, false);
  for (std::size_t s = 0; s < nseq; ++s) needed_last[s * len + batch.sequences[s].size() - 1] = true;

  ForwardResult result;
  if (capture_trace) result.trace.emplace();

  const std::size_t capacity =
      router.dense_control ? n : expert_capacity({nseq, len, router.capacity_factor, nexp});

  Matrix u, q, k, v, att, out, moe;
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& layer = weights_.layers[l];
    const bool last = l + 1 == weights_.layers.size();

    kernels::rmsnorm_rows(h, u);
    kernels::matmul(u, layer.wq, q);
    kernels::matmul(u, layer.wk, k);
    kernels::matmul(u, layer.wv, v);
    if (capture != nullptr) {
      Matrix ck(capture->prefix_len, d), cv(capture->prefix_len, d);
      for (std::size_t t = 0; t < capture->prefix_len; ++t) {
        const std::size_t row = capture->sequence * len + t;
        std::copy_n(k.row(row).begin(), d, ck.row(t).begin());
        std::copy_n(v.row(row).begin(), d, cv.row(t).begin());
      }
      capture->keys.push_back(std::move(ck));
      capture->values.push_back(std::move(cv));
    }
    kernels::causal_attention(q, k, v, nseq, len, att);
    kernels::matmul(att, layer.wo, out);
    if (router.quantization.site == QuantSite::AttentionOutputs) {
      quantize_inplace(out.data(), router.quantization.decimals);
    }
    for (std::size_t i = 0; i < h.data().size(); ++i) h.data()[i] += out.data()[i];

    kernels::rmsnorm_rows(h, u);
    GateMatrix g = deprioritize_padding(gate(u, layer.gate, router.quantization), multipliers);
    ExpertAssignment assignment = route_with_capacity(g, capacity, router, {nseq, len}, l);

    moe = Matrix(n, d);
    std::vector<std::size_t> rows;
    std::vector<double> weights;
    for (std::size_t e = 0; e < nexp; ++e) {
      rows.clear();
      weights.clear();
      for (const auto& slot : assignment.experts[e]) {
        if (last && !needed_last[slot.token]) continue;
        rows.push_back(slot.token);
        weights.push_back(slot.weight);
      }
      if (rows.empty()) continue;
      kernels::ffn_rows(u, rows, layer.experts[e].w1, layer.experts[e].w2, out);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto dst = moe.row(rows[r]);
        const auto src = out.row(r);
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c] * weights[r];
      }
    }
    for (std::size_t i = 0; i < h.data().size(); ++i) h.data()[i] += moe.data()[i];

    if (capture_trace) result.trace->push_back({std::move(g), std::move(assignment)});
  }

  result.logits.reserve(nseq);
  for (std::size_t s = 0; s < nseq; ++s) {
    result.logits.push_back(unembed(weights_.embedding, h.row(s * len + batch.sequences[s].size() - 1)));
  }
  return result;
}

ForwardResult Model::forward_batch(const Batch& batch, const RouterConfig& router,
                                   bool capture_trace) const {
  return run(batch, router, capture_trace, nullptr);
}

PrefixCache Model::build_prefix_cache(const Batch& batch, const RouterConfig& router,
                                      std::size_t sequence, std::size_t prefix_len,
                                      RouterTrace* trace) const {
  if (sequence >= batch.size()) throw InvalidInput("prefix cache: sequence index out of range");
  if (prefix_len > batch.sequences[sequence].size()) {
    throw InvalidInput("prefix cache: prefix longer than the sequence");
  }
  if (prefix_len >= static_cast<std::size_t>(config_.max_len)) {
    throw InvalidInput("prefix cache: no room to append a token");
  }
  Captured cap;
  cap.sequence = sequence;
  cap.prefix_len = prefix_len;
  ForwardResult fr = run(batch, router, trace != nullptr, &cap);
  if (trace != nullptr) *trace = std::move(*fr.trace);

  PrefixCache cache;
  cache.sequence = sequence;
  cache.prefix_len = prefix_len;
  cache.batch_sequences = batch.size();
  cache.batch_length = batch.length;
  cache.router = router;
  cache.keys = std::move(cap.keys);
  cache.values = std::move(cap.values);
  return cache;
}

LogitVector Model::forward_with_forced_path(const PrefixCache& cache, TokenId token,
                                            const RoutingPath& path) const {
  if (path.experts() != config_.experts || path.layers() != config_.depth) {
    throw InvalidInput("routing path shape does not match the model");
  }
  if (token < 0 || token >= config_.vocab_size) throw InvalidInput("token id out of range");
  if (cache.keys.size() != weights_.layers.size()) throw InvalidInput("prefix cache depth mismatch");

  const auto d = static_cast<std::size_t>(config_.hidden);
  const std::size_t pos = cache.prefix_len;
  const RouterConfig& router = cache.router;

  Matrix h(1, d);
  {
    const auto e = weights_.embedding.row(static_cast<std::size_t>(token));
    const auto p = weights_.positions.row(pos);
    for (std::size_t c = 0; c < d; ++c) h(0, c) = e[c] + p[c];
  }
  const double multiplier = padding_multiplier(token, router);

  Matrix u(1, d), keys(pos + 1, d), values(pos + 1, d), q(1, d), att(1, d), out(1, d);
  std::vector<double> hidden(static_cast<std::size_t>(config_.ffn_hidden)), y(d), moe(d);
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& layer = weights_.layers[l];
    kernels::rmsnorm(h.row(0), u.row(0));
    std::copy(cache.keys[l].data().begin(), cache.keys[l].data().end(), keys.data().begin());
    std::copy(cache.values[l].data().begin(), cache.values[l].data().end(), values.data().begin());
    kernels::matvec(u.row(0), layer.wq, q.row(0));
    kernels::matvec(u.row(0), layer.wk, keys.row(pos));
    kernels::matvec(u.row(0), layer.wv, values.row(pos));
    kernels::attend(q.row(0), keys, values, 0, pos + 1, att.row(0));
    kernels::matvec(att.row(0), layer.wo, out.row(0));
    if (router.quantization.site == QuantSite::AttentionOutputs) {
      quantize_inplace(out.row(0), router.quantization.decimals);
    }
    for (std::size_t c = 0; c < d; ++c) h(0, c) += out(0, c);

    kernels::rmsnorm(h.row(0), u.row(0));
    const std::vector<double> mult{multiplier};
    const GateMatrix g = deprioritize_padding(gate(u, layer.gate, router.quantization), mult);

    std::fill(moe.begin(), moe.end(), 0.0);
    for (int e = 0; e < config_.experts; ++e) {
      if (!path.at(e, static_cast<int>(l))) continue;
      const auto& ex = layer.experts[static_cast<std::size_t>(e)];
      kernels::ffn(u.row(0), ex.w1, ex.w2, hidden, y);
      const double w = g(0, static_cast<std::size_t>(e));
      for (std::size_t c = 0; c < d; ++c) moe[c] += y[c] * w;
    }
    for (std::size_t c = 0; c < d; ++c) h(0, c) += moe[c];
  }
  return unembed(weights_.embedding, h.row(0));
}

GateMatrix Model::first_layer_gates(const TokenSequence& tokens, const RouterConfig& router) const {
  Batch batch = make_batch({tokens});
  check_batch(batch);
  const std::size_t len = batch.length;
  const auto d = static_cast<std::size_t>(config_.hidden);
  const auto& layer = weights_.layers.front();

  Matrix h(len, d);
  std::vector<double> multipliers(len);
  for (std::size_t t = 0; t < len; ++t) {
    const auto e = weights_.embedding.row(static_cast<std::size_t>(tokens[t]));
    const auto p = weights_.positions.row(t);
    for (std::size_t c = 0; c < d; ++c) h(t, c) = e[c] + p[c];
    multipliers[t] = padding_multiplier(tokens[t], router);
  }
  Matrix u, q, k, v, att, out;
  kernels::rmsnorm_rows(h, u);
  kernels::matmul(u, layer.wq, q);
  kernels::matmul(u, layer.wk, k);
  kernels::matmul(u, layer.wv, v);
  kernels::causal_attention(q, k, v, 1, len, att);
  kernels::matmul(att, layer.wo, out);
  if (router.quantization.site == QuantSite::AttentionOutputs) {
    quantize_inplace(out.data(), router.quantization.decimals);
  }
  for (std::size_t i = 0; i < h.data().size(); ++i) h.data()[i] += out.data()[i];
  kernels::rmsnorm_rows(h, u);
  return deprioritize_padding(gate(u, layer.gate, router.quantization), multipliers);
}

}  // namespace moeleak
