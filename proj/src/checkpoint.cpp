#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "moeleak/errors.hpp"
#include "moeleak/model.hpp"

// Layout (all integers little-endian):
//   char[8]  "MOELEAK1"
//   i32      depth, experts, hidden, ffn_hidden, vocab_size, max_len
//   u64      seed
//   f64      embed_gain, gate_gain
//   then every matrix as (u64 rows, u64 cols, f64 data[rows*cols]) in the
//   order: embedding, positions, and per layer wq wk wv wo gate, then per
//   expert w1 w2.

namespace moeleak {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr std::array<char, 8> kMagic{'M', 'O', 'E', 'L', 'E', 'A', 'K', '1'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ConfigError("checkpoint truncated");
  return value;
}

void put_matrix(std::ofstream& out, const Matrix& m) {
  put<std::uint64_t>(out, m.rows());
  put<std::uint64_t>(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data().data()),
            static_cast<std::streamsize>(m.data().size() * sizeof(double)));
}

Matrix get_matrix(std::ifstream& in, std::size_t rows, std::size_t cols) {
  const auto r = get<std::uint64_t>(in);
  const auto c = get<std::uint64_t>(in);
  if (r != rows || c != cols) throw ConfigError("checkpoint matrix shape mismatch");
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data().data()),
          static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  if (!in) throw ConfigError("checkpoint truncated");
  return m;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path.string());
  const auto& c = model.config();
  out.write(kMagic.data(), kMagic.size());
  put<std::int32_t>(out, c.depth);
  put<std::int32_t>(out, c.experts);
  put<std::int32_t>(out, c.hidden);
  put<std::int32_t>(out, c.ffn_hidden);
  put<std::int32_t>(out, c.vocab_size);
  put<std::int32_t>(out, c.max_len);
  put<std::uint64_t>(out, c.seed);
  put<double>(out, c.embed_gain);
  put<double>(out, c.gate_gain);

  const auto& w = model.weights();
  put_matrix(out, w.embedding);
  put_matrix(out, w.positions);
  for (const auto& layer : w.layers) {
    put_matrix(out, layer.wq);
    put_matrix(out, layer.wk);
    put_matrix(out, layer.wv);
    put_matrix(out, layer.wo);
    put_matrix(out, layer.gate);
    for (const auto& ex : layer.experts) {
      put_matrix(out, ex.w1);
      put_matrix(out, ex.w2);
    }
  }
  if (!out) throw ConfigError("failed writing checkpoint: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ConfigError("not a moeleak checkpoint: " + path.string());

  ModelConfig c;
  c.depth = get<std::int32_t>(in);
  c.experts = get<std::int32_t>(in);
  c.hidden = get<std::int32_t>(in);
  c.ffn_hidden = get<std::int32_t>(in);
  c.vocab_size = get<std::int32_t>(in);
  c.max_len = get<std::int32_t>(in);
  c.seed = get<std::uint64_t>(in);
  c.embed_gain = get<double>(in);
  c.gate_gain = get<double>(in);
  c.validate();

  const auto d = static_cast<std::size_t>(c.hidden);
  const auto f = static_cast<std::size_t>(c.ffn_hidden);
  ModelWeights w;
  w.embedding = get_matrix(in, static_cast<std::size_t>(c.vocab_size), d);
  w.positions = get_matrix(in, static_cast<std::size_t>(c.max_len), d);
  for (int l = 0; l < c.depth; ++l) {
    ModelWeights::Layer layer;
    layer.wq = get_matrix(in, d, d);
    layer.wk = get_matrix(in, d, d);
    layer.wv = get_matrix(in, d, d);
    layer.wo = get_matrix(in, d, d);
    layer.gate = get_matrix(in, d, static_cast<std::size_t>(c.experts));
    for (int e = 0; e < c.experts; ++e) {
      ModelWeights::Expert ex;
      ex.w1 = get_matrix(in, d, f);
      ex.w2 = get_matrix(in, f, d);
      layer.experts.push_back(std::move(ex));
    }
    w.layers.push_back(std::move(layer));
  }
  return Model(c, std::move(w));
}

}  // namespace moeleak
