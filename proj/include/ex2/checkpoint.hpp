#pragma once

#include "ex2/core.hpp"
#include "ex2/exemplar.hpp"
#include "ex2/nn.hpp"
#include "ex2/rl.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ex2 {

/// Unreadable, corrupt, or incomplete checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Flat binary checkpoint. All integers are unsigned little-endian, all reals
/// IEEE-754 binary64 little-endian.
///
///   magic    8 bytes  "EX2CKPT\0"
///   version  u32      kCheckpointVersion
///   count    u32      number of records
///   record*  count
///
/// record:
///   name_len u32, name bytes (UTF-8, no terminator)
///   kind     u32      0 = network, 1 = matrix
///   network: layers u32, then per layer
///              out u32, in u32, activation u8, group u8,
///              weight out*in reals row-major, bias out reals
///   matrix:  rows u32, cols u32, rows*cols reals row-major
///
/// Records are written in name order. Optimizer state is not stored.
inline constexpr char kCheckpointMagic[8] = {'E', 'X', '2', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, nn::Mlp> networks;
  std::map<std::string, Eigen::MatrixXd> matrices;

  bool has_network(const std::string& k) const { return networks.count(k) > 0; }
  bool has_matrix(const std::string& k) const { return matrices.count(k) > 0; }

  const nn::Mlp& network(const std::string& k) const {
    const auto it = networks.find(k);
    if (it == networks.end()) throw CheckpointError("checkpoint: missing network '" + k + "'");
    return it->second;
  }
  const Eigen::MatrixXd& matrix(const std::string& k) const {
    const auto it = matrices.find(k);
    if (it == matrices.end()) throw CheckpointError("checkpoint: missing matrix '" + k + "'");
    return it->second;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

inline void write_reals(ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

inline Eigen::MatrixXd read_reals(ByteReader& r, std::uint32_t rows, std::uint32_t cols) {
  r.need(std::size_t{rows} * cols * 8);
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f64();
  return m;
}

}  // namespace detail

inline std::string checkpoint_bytes(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.networks.size() + ck.matrices.size()));
  // Both maps are name-ordered; merge them so the file is too.
  auto net = ck.networks.begin();
  auto mat = ck.matrices.begin();
  while (net != ck.networks.end() || mat != ck.matrices.end()) {
    const bool take_net = mat == ck.matrices.end() || (net != ck.networks.end() && net->first < mat->first);
    if (take_net) {
      w.str(net->first);
      w.u32(0);
      w.u32(static_cast<std::uint32_t>(net->second.layers.size()));
      for (const auto& l : net->second.layers) {
        w.u32(static_cast<std::uint32_t>(l.out_dim()));
        w.u32(static_cast<std::uint32_t>(l.in_dim()));
        w.u8(static_cast<std::uint8_t>(l.activation));
        w.u8(static_cast<std::uint8_t>(l.group));
        detail::write_reals(w, l.weight);
        detail::write_reals(w, l.bias);
      }
      ++net;
    } else {
      w.str(mat->first);
      w.u32(1);
      w.u32(static_cast<std::uint32_t>(mat->second.rows()));
      w.u32(static_cast<std::uint32_t>(mat->second.cols()));
      detail::write_reals(w, mat->second);
      ++mat;
    }
  }
  return w.take();
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  r.need(sizeof kCheckpointMagic);
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("checkpoint: bad magic bytes");
  for (std::size_t i = 0; i < sizeof kCheckpointMagic; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    if (ck.has_network(name) || ck.has_matrix(name)) throw CheckpointError("checkpoint: duplicate record '" + name + "'");
    const std::uint32_t kind = r.u32();
    if (kind == 0) {
      const std::uint32_t n = r.u32();
      std::vector<nn::Layer> layers;
      for (std::uint32_t i = 0; i < n; ++i) {
        nn::Layer l;
        const std::uint32_t out = r.u32();
        const std::uint32_t in = r.u32();
        const std::uint8_t act = r.u8();
        const std::uint8_t group = r.u8();
        if (act > static_cast<std::uint8_t>(nn::Activation::linear) ||
            group > static_cast<std::uint8_t>(nn::LrGroup::head))
          throw CheckpointError("checkpoint: bad layer tag in '" + name + "'");
        l.activation = static_cast<nn::Activation>(act);
        l.group = static_cast<nn::LrGroup>(group);
        l.weight = detail::read_reals(r, out, in);
        l.bias = detail::read_reals(r, out, 1).col(0);
        layers.push_back(std::move(l));
      }
      ck.networks.emplace(name, nn::Mlp(std::move(layers)));
    } else if (kind == 1) {
      const std::uint32_t rows = r.u32();
      const std::uint32_t cols = r.u32();
      ck.matrices.emplace(name, detail::read_reals(r, rows, cols));
    } else {
      throw CheckpointError("checkpoint: unknown record kind in '" + name + "'");
    }
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  const std::string bytes = checkpoint_bytes(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

// Record names used for run checkpoints.

inline void put_policy(Checkpoint& ck, const rl::Policy& p) {
  ck.networks["policy.net"] = p.net;
  Eigen::MatrixXd meta(1, 2);
  meta << static_cast<double>(p.head), p.entropy_bonus;
  ck.matrices["policy.meta"] = meta;
  if (p.head == rl::HeadKind::diagonal_gaussian) ck.matrices["policy.log_std"] = p.log_std;
}

inline rl::Policy get_policy(const Checkpoint& ck) {
  rl::Policy p;
  p.net = ck.network("policy.net");
  const auto& meta = ck.matrix("policy.meta");
  if (meta.size() != 2) throw CheckpointError("checkpoint: malformed policy.meta");
  const double head = meta(0, 0);
  if (head != 0.0 && head != 1.0) throw CheckpointError("checkpoint: unknown policy head");
  p.head = static_cast<rl::HeadKind>(static_cast<int>(head));
  p.entropy_bonus = meta(0, 1);
  if (p.head == rl::HeadKind::diagonal_gaussian) {
    p.log_std = ck.matrix("policy.log_std").col(0);
    if (p.log_std.size() != p.net.out_dim()) throw CheckpointError("checkpoint: log_std size mismatch");
  }
  return p;
}

inline void put_amortized(Checkpoint& ck, const AmortizedLatent& m) {
  ck.networks["amortized.encoder_ex"] = m.encoder_ex;
  ck.networks["amortized.encoder_query"] = m.encoder_query;
  ck.networks["amortized.discriminator"] = m.discriminator;
  Eigen::MatrixXd meta(1, 4);
  meta << m.latent_dim, m.kl_weight, m.eval_samples, m.standardize ? 1.0 : 0.0;
  ck.matrices["amortized.meta"] = meta;
  if (!m.scaler.empty()) {
    Eigen::MatrixXd sc(m.scaler.shift.size(), 2);
    sc << m.scaler.shift, m.scaler.scale;
    ck.matrices["amortized.scaler"] = sc;
  }
}

inline std::optional<AmortizedLatent> get_amortized(const Checkpoint& ck) {
  if (!ck.has_network("amortized.discriminator")) return std::nullopt;
  AmortizedLatent m;
  m.encoder_ex = ck.network("amortized.encoder_ex");
  m.encoder_query = ck.network("amortized.encoder_query");
  m.discriminator = ck.network("amortized.discriminator");
  const auto& meta = ck.matrix("amortized.meta");
  if (meta.size() != 4) throw CheckpointError("checkpoint: malformed amortized.meta");
  m.latent_dim = static_cast<int>(meta(0, 0));
  m.kl_weight = meta(0, 1);
  m.eval_samples = static_cast<int>(meta(0, 2));
  m.standardize = meta(0, 3) != 0.0;
  if (ck.has_matrix("amortized.scaler")) {
    const auto& sc = ck.matrix("amortized.scaler");
    if (sc.cols() != 2 || sc.rows() != m.encoder_ex.in_dim()) throw CheckpointError("checkpoint: malformed amortized.scaler");
    m.scaler.shift = sc.col(0);
    m.scaler.scale = sc.col(1);
  }
  if (m.encoder_ex.out_dim() != 2 * m.latent_dim || m.encoder_query.out_dim() != 2 * m.latent_dim ||
      m.discriminator.in_dim() != 2 * m.latent_dim || m.encoder_ex.in_dim() != m.encoder_query.in_dim())
    throw CheckpointError("checkpoint: amortized network shapes disagree");
  m.reset_optimizers();
  return m;
}

/// States as columns.
template <StatePool Pool>
void put_states(Checkpoint& ck, const std::string& name, const Pool& states) {
  if (states.size() == 0) return;
  Eigen::MatrixXd m(static_cast<const State&>(states[0]).size(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = states[i];
  ck.matrices[name] = m;
}

inline std::vector<State> get_states(const Checkpoint& ck, const std::string& name) {
  std::vector<State> out;
  if (!ck.has_matrix(name)) return out;
  const auto& m = ck.matrix(name);
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.emplace_back(m.col(c));
  return out;
}

}  // namespace ex2
