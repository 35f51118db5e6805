#include "trajgen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "trajgen/hash.hpp"

namespace trajgen {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'J', 'G', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void matrix(const Matrix& m) {
    i64(m.rows());
    i64(m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}
  void need(std::size_t n) {
    if (pos_ + n > end_) throw FormatError("checkpoint truncated");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto rows = i64();
    const auto cols = i64();
    if (rows < 0 || cols < 0 || static_cast<std::uint64_t>(rows * cols) > (end_ - pos_) / 8) {
      throw FormatError("checkpoint matrix header is corrupt");
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
    return m;
  }
  void magic() {
    need(sizeof(kMagic));
    if (std::memcmp(data_.data() + pos_, kMagic, sizeof(kMagic)) != 0) throw FormatError("not a checkpoint file (bad magic)");
    pos_ += sizeof(kMagic);
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.n_layers = static_cast<int>(r.i64());
  c.n_heads = static_cast<int>(r.i64());
  c.d_model = static_cast<int>(r.i64());
  c.block_size = static_cast<int>(r.i64());
  c.vocab_size = static_cast<int>(r.i64());
  c.dropout = r.f64();
  c.seed = r.u64();
  const auto head = r.i64();
  if (head != 0 && head != 1) throw FormatError("checkpoint has an unknown head kind");
  c.head = static_cast<HeadKind>(head);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config block is invalid: ") + e.what());
  }
  return c;
}

// Validates framing and checksum; returns the payload length.
std::size_t verify(const std::string& data) {
  if (data.size() < sizeof(kMagic) + 4 + 8) throw FormatError("checkpoint truncated");
  const std::size_t end = data.size() - 8;
  Reader tail(data, data.size());
  Fnv1a h;
  h.update(data.data(), end);
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[end + i])) << (8 * i);
  if (stored != h.digest()) throw FormatError("checkpoint checksum mismatch (file is corrupt)");
  return end;
}

void read_body(Reader& r, TransformerModel& model, AdamW* opt, bool& has_opt, std::string& metadata) {
  metadata = r.str();
  auto& params = model.parameters();
  const auto count = r.u64();
  if (count != params.size()) throw FormatError("checkpoint parameter count does not match the model");
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) throw FormatError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    Matrix m = r.matrix();
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) throw FormatError("checkpoint parameter '" + name + "' has the wrong shape");
    p.value = std::move(m);
    p.grad.setZero(p.value.rows(), p.value.cols());
  }
  has_opt = r.u8() != 0;
  if (has_opt) {
    AdamWConfig oc;
    const auto step = r.i64();
    oc.lr = r.f64();
    oc.beta1 = r.f64();
    oc.beta2 = r.f64();
    oc.eps = r.f64();
    oc.weight_decay = r.f64();
    oc.grad_clip = r.f64();
    AdamW loaded(oc, params);
    loaded.set_step_count(step);
    for (auto& m : loaded.first_moments()) {
      Matrix x = r.matrix();
      if (x.rows() != m.rows() || x.cols() != m.cols()) throw FormatError("checkpoint optimizer moment has the wrong shape");
      m = std::move(x);
    }
    for (auto& v : loaded.second_moments()) {
      Matrix x = r.matrix();
      if (x.rows() != v.rows() || x.cols() != v.cols()) throw FormatError("checkpoint optimizer moment has the wrong shape");
      v = std::move(x);
    }
    if (opt) *opt = std::move(loaded);
  }
  std::istringstream rng_state(r.str());
  rng_state >> model.dropout_rng();
  if (!rng_state) throw FormatError("checkpoint RNG state is corrupt");
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
}

}  // namespace

void save_checkpoint(const std::string& path, const TransformerModel& model, const AdamW* optimizer,
                     const std::string& metadata) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  const auto& c = model.config();
  w.i64(c.n_layers);
  w.i64(c.n_heads);
  w.i64(c.d_model);
  w.i64(c.block_size);
  w.i64(c.vocab_size);
  w.f64(c.dropout);
  w.u64(c.seed);
  w.i64(static_cast<std::int64_t>(c.head));
  w.str(metadata);
  w.u64(model.parameters().size());
  for (const auto& p : model.parameters()) {
    w.str(p.name);
    w.matrix(p.value);
  }
  w.u8(optimizer ? 1 : 0);
  if (optimizer) {
    const auto& oc = optimizer->config();
    w.i64(optimizer->step_count());
    w.f64(oc.lr);
    w.f64(oc.beta1);
    w.f64(oc.beta2);
    w.f64(oc.eps);
    w.f64(oc.weight_decay);
    w.f64(oc.grad_clip);
    for (const auto& m : optimizer->first_moments()) w.matrix(m);
    for (const auto& v : optimizer->second_moments()) w.matrix(v);
  }
  std::ostringstream rng_state;
  rng_state << model.dropout_rng();
  w.str(rng_state.str());
  Fnv1a h;
  h.update(w.data().data(), w.data().size());
  w.u64(h.digest());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  Reader r(data, verify(data));
  r.magic();
  if (r.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ck{TransformerModel(read_config(r)), false, AdamW{}, {}};
  read_body(r, ck.model, &ck.optimizer, ck.has_optimizer, ck.metadata);
  return ck;
}

std::string load_checkpoint_into(const std::string& path, TransformerModel& model, AdamW* optimizer) {
  const std::string data = read_file(path);
  Reader r(data, verify(data));
  r.magic();
  if (r.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const ModelConfig c = read_config(r);
  const auto& m = model.config();
  if (!c.same_shape(m)) {
    std::string why = c.vocab_size != m.vocab_size
                          ? "vocab_size " + std::to_string(c.vocab_size) + " != " + std::to_string(m.vocab_size)
                          : std::string("architecture differs");
    throw FormatError("checkpoint config mismatch: " + why);
  }
  bool has_opt = false;
  std::string metadata;
  read_body(r, model, optimizer, has_opt, metadata);
  return metadata;
}

std::string file_hash(const std::string& path) {
  return hex64(fnv1a(read_file(path)));
}

}  // namespace trajgen
