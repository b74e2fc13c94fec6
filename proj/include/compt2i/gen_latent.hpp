// Copyright 2026 The compt2i Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Pretrained-generator stand-in. A layered latent code z (L x d) is pooled
// over layers and read out through an invertible mixing matrix, so raw latent
// coordinates are entangled while the inverse mixing gives exact oracles.
//
// Rendering, per slot s with palette colors c_v:
//   P       = sum_l w_l z_l
//   logit_v = gain * <P, M^-T q_v>
//   color   = sum_v softmax(logit / T)_v c_v
// pushed toward an over-saturated color once the top logit gap passes the
// exaggeration onset or the nuisance readout leaves the prior's typical
// range (off-manifold codes look unnatural), then modulated by a zero-mean
// shading field driven by the nuisance axes.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "compt2i/error.hpp"
#include "compt2i/image.hpp"
#include "compt2i/rng.hpp"
#include "compt2i/synthworld.hpp"

namespace compt2i {

struct LatentCode {
  Eigen::MatrixXd values;  // layers x dims

  LatentCode() = default;
  explicit LatentCode(Eigen::MatrixXd v) : values(std::move(v)) {}
  static LatentCode Zero(int layers, int dims) {
    return LatentCode(Eigen::MatrixXd::Zero(layers, dims));
  }
  int layers() const { return static_cast<int>(values.rows()); }
  int dims() const { return static_cast<int>(values.cols()); }
};

enum class DirectionKind { kSentence, kAttribute };

struct Direction {
  Eigen::MatrixXd values;  // layers x dims
  DirectionKind kind = DirectionKind::kSentence;

  double Norm() const { return values.norm(); }
};

inline LatentCode operator+(const LatentCode& z, const Direction& d) {
  return LatentCode(z.values + d.values);
}
inline LatentCode operator-(const LatentCode& z, const Direction& d) {
  return LatentCode(z.values - d.values);
}

// Layer-major flattening: entry (l, j) -> l * dims + j.
inline Eigen::VectorXd Flatten(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v(m.size());
  for (Eigen::Index l = 0; l < m.rows(); ++l)
    v.segment(l * m.cols(), m.cols()) = m.row(l).transpose();
  return v;
}
inline Eigen::MatrixXd Unflatten(const Eigen::VectorXd& v, int layers,
                                 int dims) {
  Eigen::MatrixXd m(layers, dims);
  for (int l = 0; l < layers; ++l) m.row(l) = v.segment(l * dims, dims);
  return m;
}

struct GeneratorParams {
  int layers = 4;
  int dims = 16;
  std::vector<double> layer_weights = {0.1, 0.2, 0.3, 0.4};
  double gain = 0.5;
  double temperature = 0.25;
  double decision_margin = 2.0;
  // Prior standard deviation (in z units) along semantic / nuisance axes.
  double semantic_scale = 0.1;
  double nuisance_scale = 0.25;
  double shear = 0.2;
  double shading_amplitude = 0.6;
  double exaggeration_onset = 3.0;
  double exaggeration_rate = 0.5;
  double exaggeration_contrast = 4.0;
  // Norm of the nuisance readout past which every slot exaggerates as well;
  // prior draws stay below it with high probability.
  double nuisance_onset = 3.0;
};

// One sinusoidal shading basis; odd under horizontal mirroring so that its
// tanh has zero mean over any mirror-symmetric region.
struct ShadingBasis {
  double col_freq = 1.0;
  double row_freq = 1.0;
  double row_phase = 0.0;
};

class Generator {
 public:
  AttributeSchema schema;
  GeneratorParams params;
  std::uint64_t seed = 0;
  Eigen::MatrixXd mixing;      // M, dims x dims
  Eigen::MatrixXd mixing_inv;  // M^-1
  // Orthonormal axes in whitened space: semantic[s][v], nuisance[k].
  std::vector<std::vector<Eigen::VectorXd>> semantic_axes;
  std::vector<Eigen::VectorXd> nuisance_axes;
  std::vector<ShadingBasis> shading;

  // Derived state, rebuilt by Finalize().
  std::vector<std::vector<Eigen::VectorXd>> readout;  // M^-T q
  std::vector<Eigen::VectorXd> nuisance_readout;      // M^-T r
  std::vector<int> pixel_slot;                        // -1: no slot
  std::vector<std::vector<double>> basis_maps;        // K x (H*W)
  std::vector<std::size_t> slot_area;

  int image_size() const { return schema.image_size; }
  int layers() const { return params.layers; }
  int dims() const { return params.dims; }

  void Finalize() {
    const int n = image_size();
    readout.assign(semantic_axes.size(), {});
    const Eigen::MatrixXd inv_t = mixing_inv.transpose();
    for (std::size_t s = 0; s < semantic_axes.size(); ++s)
      for (const auto& q : semantic_axes[s]) readout[s].push_back(inv_t * q);
    nuisance_readout.clear();
    for (const auto& r : nuisance_axes) nuisance_readout.push_back(inv_t * r);

    pixel_slot.assign(static_cast<std::size_t>(n) * n, -1);
    int background = -1;
    for (std::size_t s = 0; s < schema.slots.size(); ++s) {
      const auto& slot = schema.slots[s];
      if (slot.is_background()) {
        background = static_cast<int>(s);
        continue;
      }
      const Rect& r = *slot.region;
      for (int y = r.row0; y < r.row0 + r.rows; ++y)
        for (int x = r.col0; x < r.col0 + r.cols; ++x)
          pixel_slot[static_cast<std::size_t>(y) * n + x] = static_cast<int>(s);
    }
    if (background >= 0)
      for (auto& p : pixel_slot)
        if (p < 0) p = background;
    slot_area.assign(schema.slots.size(), 0);
    for (int p : pixel_slot)
      if (p >= 0) ++slot_area[p];

    basis_maps.assign(shading.size(),
                      std::vector<double>(static_cast<std::size_t>(n) * n));
    const double center = 0.5 * (n - 1);
    for (std::size_t k = 0; k < shading.size(); ++k) {
      const auto& b = shading[k];
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          basis_maps[k][static_cast<std::size_t>(y) * n + x] =
              std::sin(std::numbers::pi * b.col_freq * (x - center) / n) *
              std::cos(std::numbers::pi * b.row_freq * y / n + b.row_phase);
    }
  }

  Eigen::VectorXd Pool(const LatentCode& z) const {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(dims());
    for (int l = 0; l < layers(); ++l)
      p += params.layer_weights[l] * z.values.row(l).transpose();
    return p;
  }

  void CheckShape(const LatentCode& z) const {
    if (z.layers() != layers() || z.dims() != dims())
      throw InvalidArgument("latent shape mismatch: expected " +
                            std::to_string(layers()) + "x" +
                            std::to_string(dims()));
  }
};

// ---------------------------------------------------------------------------
// Construction.

namespace detail {

inline Eigen::MatrixXd RandomOrthogonal(int n, Rng& rng) {
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = rng.Normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  // Fix column signs so the factorization is unique.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

}  // namespace detail

inline Generator BuildGenerator(const AttributeSchema& schema,
                                std::uint64_t seed,
                                const GeneratorParams& params = {}) {
  ValidateSchema(schema);
  if (params.layers < 1 || params.dims < 1)
    throw InvalidArgument("generator needs positive layers and dims");
  if (static_cast<int>(params.layer_weights.size()) != params.layers)
    throw InvalidArgument("layer_weights must have one entry per layer");
  std::size_t n_semantic = 0;
  for (const auto& s : schema.slots) n_semantic += s.values.size();
  if (n_semantic > static_cast<std::size_t>(params.dims))
    throw InvalidArgument("latent dims too small for the schema's values");

  Generator g;
  g.schema = schema;
  g.params = params;
  g.seed = seed;
  Rng rng(MixSeed(seed, "generator"));
  const int d = params.dims;

  const Eigen::MatrixXd axes = detail::RandomOrthogonal(d, rng);
  int col = 0;
  g.semantic_axes.resize(schema.slots.size());
  for (std::size_t s = 0; s < schema.slots.size(); ++s)
    for (std::size_t v = 0; v < schema.slots[s].values.size(); ++v)
      g.semantic_axes[s].push_back(axes.col(col++));
  Eigen::VectorXd scales(d);
  scales.head(col).setConstant(params.semantic_scale);
  for (int k = col; k < d; ++k) {
    g.nuisance_axes.push_back(axes.col(k));
    scales(k) = params.nuisance_scale;
  }

  const Eigen::MatrixXd rotation = detail::RandomOrthogonal(d, rng);
  Eigen::MatrixXd shear = Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      shear(i, j) = params.shear * rng.Normal() / std::sqrt(double(d));
  g.mixing = rotation * shear * axes * scales.asDiagonal() * axes.transpose();
  g.mixing_inv = g.mixing.inverse();

  for (std::size_t k = 0; k < g.nuisance_axes.size(); ++k)
    g.shading.push_back(ShadingBasis{
        1.0 + static_cast<double>(rng.Index(3)),
        static_cast<double>(rng.Index(3)),
        2.0 * std::numbers::pi * rng.Uniform()});
  g.Finalize();
  return g;
}

inline double ConditionNumber(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  return s(0) / s(s.size() - 1);
}

// ---------------------------------------------------------------------------
// Sampling.

inline LatentCode SampleLatent(const Generator& g, Rng& rng) {
  Eigen::MatrixXd eps(g.layers(), g.dims());
  for (int l = 0; l < g.layers(); ++l)
    for (int j = 0; j < g.dims(); ++j) eps(l, j) = rng.Normal();
  return LatentCode((g.mixing * eps.transpose()).transpose());
}

inline std::vector<LatentCode> SampleLatents(const Generator& g,
                                             std::uint64_t seed,
                                             std::size_t count) {
  Rng rng(MixSeed(seed, "latent"));
  std::vector<LatentCode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(SampleLatent(g, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Logits and the latent-path oracle reader.

// logits[s][v] for every slot and value.
inline std::vector<Eigen::VectorXd> SlotLogits(const Generator& g,
                                               const LatentCode& z) {
  g.CheckShape(z);
  const Eigen::VectorXd p = g.Pool(z);
  std::vector<Eigen::VectorXd> out(g.readout.size());
  for (std::size_t s = 0; s < g.readout.size(); ++s) {
    out[s].resize(static_cast<Eigen::Index>(g.readout[s].size()));
    for (std::size_t v = 0; v < g.readout[s].size(); ++v)
      out[s](v) = g.params.gain * p.dot(g.readout[s][v]);
  }
  return out;
}

namespace detail {
inline void TopTwo(const Eigen::VectorXd& x, int& top, int& second) {
  top = 0;
  second = -1;
  for (int i = 1; i < x.size(); ++i) {
    if (x(i) > x(top)) {
      second = top;
      top = i;
    } else if (second < 0 || x(i) > x(second)) {
      second = i;
    }
  }
}
}  // namespace detail

inline AttributeAssignment ReadAttributes(const Generator& g,
                                          const LatentCode& z) {
  const auto logits = SlotLogits(g, z);
  AttributeAssignment a;
  for (const auto& l : logits) {
    Eigen::Index arg;
    l.maxCoeff(&arg);
    a.values.push_back(static_cast<int>(arg));
  }
  return a;
}

// Smallest top-vs-runner-up logit gap across slots.
inline double MinLogitMargin(const Generator& g, const LatentCode& z) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& l : SlotLogits(g, z)) {
    int top, second;
    detail::TopTwo(l, top, second);
    m = std::min(m, l(top) - l(second));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Rendering.

namespace detail {

struct SlotState {
  Eigen::VectorXd logits;
  Eigen::VectorXd weights;
  Eigen::Vector3d blend;
  Eigen::Vector3d mean_palette;
  Eigen::Vector3d extreme;
  double gap_excess = 0.0;
  double excess = 0.0;
  double beta = 0.0;
  int top = 0;
  int second = 0;
  Eigen::Vector3d color;
};

inline double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> NuisanceReadout(const Generator& g,
                                           const Eigen::VectorXd& pooled) {
  std::vector<double> nu(g.nuisance_readout.size());
  for (std::size_t k = 0; k < nu.size(); ++k) nu[k] = pooled.dot(g.nuisance_readout[k]);
  return nu;
}

inline double NuisanceExcess(const Generator& g, const std::vector<double>& nu) {
  double sq = 0.0;
  for (double v : nu) sq += v * v;
  return std::max(0.0, std::sqrt(sq) - g.params.nuisance_onset);
}

inline std::vector<SlotState> ComputeSlots(const Generator& g,
                                           const Eigen::VectorXd& pooled) {
  const auto& prm = g.params;
  const double nuisance_excess = NuisanceExcess(g, NuisanceReadout(g, pooled));
  std::vector<SlotState> out(g.schema.slots.size());
  for (std::size_t s = 0; s < out.size(); ++s) {
    auto& st = out[s];
    const auto& vals = g.schema.slots[s].values;
    const int nv = static_cast<int>(vals.size());
    st.logits.resize(nv);
    for (int v = 0; v < nv; ++v)
      st.logits(v) = prm.gain * pooled.dot(g.readout[s][v]);
    const Eigen::VectorXd scaled = st.logits / prm.temperature;
    const double mx = scaled.maxCoeff();
    st.weights = (scaled.array() - mx).exp();
    st.weights /= st.weights.sum();
    st.blend.setZero();
    st.mean_palette.setZero();
    for (int v = 0; v < nv; ++v) {
      const Eigen::Vector3d c(vals[v].color[0], vals[v].color[1],
                              vals[v].color[2]);
      st.blend += st.weights(v) * c;
      st.mean_palette += c / nv;
    }
    TopTwo(st.logits, st.top, st.second);
    const double gap = st.logits(st.top) - st.logits(st.second);
    st.gap_excess = std::max(0.0, gap - prm.exaggeration_onset);
    st.excess = st.gap_excess + nuisance_excess;
    st.beta = 1.0 - std::exp(-prm.exaggeration_rate * st.excess * st.excess);
    for (int ch = 0; ch < 3; ++ch)
      st.extreme(ch) = Sigmoid(prm.exaggeration_contrast *
                               (2.0 * st.blend(ch) - st.mean_palette(ch) - 0.5));
    st.color = (1.0 - st.beta) * st.blend + st.beta * st.extreme;
  }
  return out;
}

}  // namespace detail

inline Image Render(const Generator& g, const LatentCode& z) {
  g.CheckShape(z);
  const int n = g.image_size();
  const Eigen::VectorXd pooled = g.Pool(z);
  const auto slots = detail::ComputeSlots(g, pooled);
  std::vector<double> nu(g.nuisance_readout.size());
  for (std::size_t k = 0; k < nu.size(); ++k)
    nu[k] = pooled.dot(g.nuisance_readout[k]);

  Image img(n, n, 0.5);
  const double amp = g.params.shading_amplitude;
  for (std::size_t px = 0; px < g.pixel_slot.size(); ++px) {
    const int s = g.pixel_slot[px];
    if (s < 0) continue;
    double phi = 0.0;
    for (std::size_t k = 0; k < nu.size(); ++k) phi += nu[k] * g.basis_maps[k][px];
    const double t = std::tanh(phi);
    for (int ch = 0; ch < 3; ++ch) {
      const double c = slots[s].color(ch);
      img.data[px * 3 + ch] = c + amp * t * c * (1.0 - c);
    }
  }
  return img;
}

// Vector-Jacobian product of Render: returns dL/dz given dL/dimage.
inline LatentCode RenderBackward(const Generator& g, const LatentCode& z,
                                 const Image& grad) {
  g.CheckShape(z);
  const int n = g.image_size();
  if (grad.height != n || grad.width != n)
    throw InvalidArgument("render gradient has the wrong shape");
  const auto& prm = g.params;
  const Eigen::VectorXd pooled = g.Pool(z);
  const auto slots = detail::ComputeSlots(g, pooled);
  const std::size_t K = g.nuisance_readout.size();
  const std::vector<double> nu = detail::NuisanceReadout(g, pooled);
  const bool nuisance_active = detail::NuisanceExcess(g, nu) > 0.0;
  double d_nuisance_excess = 0.0;

  std::vector<Eigen::Vector3d> d_color(slots.size(), Eigen::Vector3d::Zero());
  std::vector<double> d_nu(K, 0.0);
  const double amp = prm.shading_amplitude;
  for (std::size_t px = 0; px < g.pixel_slot.size(); ++px) {
    const int s = g.pixel_slot[px];
    if (s < 0) continue;
    double phi = 0.0;
    for (std::size_t k = 0; k < K; ++k) phi += nu[k] * g.basis_maps[k][px];
    const double t = std::tanh(phi);
    double d_t = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      const double c = slots[s].color(ch);
      const double gp = grad.data[px * 3 + ch];
      d_color[s](ch) += gp * (1.0 + amp * t * (1.0 - 2.0 * c));
      d_t += gp * amp * c * (1.0 - c);
    }
    const double d_phi = d_t * (1.0 - t * t);
    if (d_phi != 0.0)
      for (std::size_t k = 0; k < K; ++k) d_nu[k] += d_phi * g.basis_maps[k][px];
  }

  Eigen::VectorXd d_pooled = Eigen::VectorXd::Zero(g.dims());
  for (std::size_t k = 0; k < K; ++k) d_pooled += d_nu[k] * g.nuisance_readout[k];
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto& st = slots[s];
    const auto& vals = g.schema.slots[s].values;
    const int nv = static_cast<int>(vals.size());
    Eigen::Vector3d d_blend = (1.0 - st.beta) * d_color[s];
    double d_beta = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      const double e = st.extreme(ch);
      d_blend(ch) +=
          d_color[s](ch) * st.beta * prm.exaggeration_contrast * e * (1.0 - e) * 2.0;
      d_beta += d_color[s](ch) * (e - st.blend(ch));
    }
    Eigen::VectorXd d_logits = Eigen::VectorXd::Zero(nv);
    if (st.excess > 0.0) {
      const double d_excess = d_beta * std::exp(-prm.exaggeration_rate *
                                                st.excess * st.excess) *
                              2.0 * prm.exaggeration_rate * st.excess;
      if (st.gap_excess > 0.0) {
        d_logits(st.top) += d_excess;
        d_logits(st.second) -= d_excess;
      }
      if (nuisance_active) d_nuisance_excess += d_excess;
    }
    Eigen::VectorXd d_w(nv);
    for (int v = 0; v < nv; ++v)
      d_w(v) = d_blend.dot(
          Eigen::Vector3d(vals[v].color[0], vals[v].color[1], vals[v].color[2]));
    const double avg = st.weights.dot(d_w);
    for (int v = 0; v < nv; ++v)
      d_logits(v) += st.weights(v) * (d_w(v) - avg) / prm.temperature;
    for (int v = 0; v < nv; ++v)
      d_pooled += prm.gain * d_logits(v) * g.readout[s][v];
  }
  if (d_nuisance_excess != 0.0) {
    double norm = 0.0;
    for (double v : nu) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < K; ++k)
      d_pooled += d_nuisance_excess * nu[k] / norm * g.nuisance_readout[k];
  }
  Eigen::MatrixXd dz(g.layers(), g.dims());
  for (int l = 0; l < g.layers(); ++l)
    dz.row(l) = prm.layer_weights[l] * d_pooled.transpose();
  return LatentCode(dz);
}

// ---------------------------------------------------------------------------
// Image-path oracle reader.

namespace detail {
// Barycentric weights w (sum 1) minimising |C w - m| for palette columns C.
inline Eigen::VectorXd PaletteWeights(const std::vector<SlotValue>& vals,
                                      const Eigen::Vector3d& mean) {
  const int nv = static_cast<int>(vals.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nv + 1, nv + 1);
  Eigen::VectorXd rhs(nv + 1);
  Eigen::MatrixXd c(3, nv);
  for (int v = 0; v < nv; ++v)
    c.col(v) << vals[v].color[0], vals[v].color[1], vals[v].color[2];
  kkt.topLeftCorner(nv, nv) = c.transpose() * c;
  kkt.block(0, nv, nv, 1).setOnes();
  kkt.block(nv, 0, 1, nv).setOnes();
  rhs.head(nv) = c.transpose() * mean;
  rhs(nv) = 1.0;
  return kkt.completeOrthogonalDecomposition().solve(rhs).head(nv);
}
}  // namespace detail

inline Eigen::Vector3d MeanSlotColor(const Generator& g, const Image& img,
                                     int slot) {
  Eigen::Vector3d m = Eigen::Vector3d::Zero();
  std::size_t count = 0;
  for (std::size_t px = 0; px < g.pixel_slot.size(); ++px) {
    if (g.pixel_slot[px] != slot) continue;
    for (int ch = 0; ch < 3; ++ch) m(ch) += img.data[px * 3 + ch];
    ++count;
  }
  return count ? Eigen::Vector3d(m / double(count)) : m;
}

inline AttributeAssignment ReadAttributes(const Generator& g,
                                          const Image& img) {
  if (img.height != g.image_size() || img.width != g.image_size())
    throw InvalidArgument("image size does not match the generator");
  AttributeAssignment a;
  for (std::size_t s = 0; s < g.schema.slots.size(); ++s) {
    const Eigen::VectorXd w = detail::PaletteWeights(
        g.schema.slots[s].values, MeanSlotColor(g, img, static_cast<int>(s)));
    Eigen::Index arg;
    w.maxCoeff(&arg);
    a.values.push_back(static_cast<int>(arg));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Oracle directions.

namespace detail {

// Row of the flattened logit map: logit_{s,v}(z) = row . flatten(z).
inline Eigen::VectorXd LogitRow(const Generator& g, int s, int v) {
  Eigen::VectorXd row(g.layers() * g.dims());
  for (int l = 0; l < g.layers(); ++l)
    row.segment(l * g.dims(), g.dims()) =
        g.params.gain * g.params.layer_weights[l] * g.readout[s][v];
  return row;
}

// min |x|  s.t.  E x = 0,  G x >= b.  Active-set enumeration; fine for the
// handful of sibling constraints a slot has.
inline Eigen::VectorXd MinNormWithInequalities(const Eigen::MatrixXd& eq,
                                               const Eigen::MatrixXd& ineq,
                                               const Eigen::VectorXd& b) {
  const Eigen::Index n = ineq.cols();
  Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(n, n);
  if (eq.rows() > 0) {
    const Eigen::MatrixXd gram = eq * eq.transpose();
    proj -= eq.transpose() * gram.ldlt().solve(eq);
  }
  const Eigen::MatrixXd gp = ineq * proj;  // projected rows
  if ((b.array() <= 0.0).all()) return Eigen::VectorXd::Zero(n);

  const int m = static_cast<int>(ineq.rows());
  Eigen::VectorXd best;
  double best_norm = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask & (1 << i)) act.push_back(i);
    Eigen::MatrixXd ga(act.size(), n);
    Eigen::VectorXd ba(act.size());
    for (std::size_t i = 0; i < act.size(); ++i) {
      ga.row(i) = gp.row(act[i]);
      ba(i) = b(act[i]);
    }
    const Eigen::MatrixXd gram = ga * ga.transpose();
    const Eigen::VectorXd lambda = gram.ldlt().solve(ba);
    if ((lambda.array() < -1e-12).any()) continue;
    const Eigen::VectorXd x = ga.transpose() * lambda;
    if (((gp * x - b).array() < -1e-9).any()) continue;
    if (x.norm() < best_norm) {
      best_norm = x.norm();
      best = x;
    }
  }
  if (best.size() == 0) throw InvalidArgument("oracle direction infeasible");
  return best;
}

}  // namespace detail

// Minimum-norm displacement that makes `target_value` beat every sibling of
// `slot` by the decision margin at z + delta, leaving the logits of all other
// slots unchanged.
inline Direction OracleAttributeDirection(const Generator& g, int slot,
                                          int target_value,
                                          const LatentCode& z) {
  g.CheckShape(z);
  if (slot < 0 || slot >= static_cast<int>(g.schema.slots.size()))
    throw InvalidArgument("oracle direction: slot out of range");
  const int nv = static_cast<int>(g.schema.slots[slot].values.size());
  if (target_value < 0 || target_value >= nv)
    throw InvalidArgument("oracle direction: value out of range");

  std::vector<Eigen::VectorXd> eq_rows;
  for (std::size_t s = 0; s < g.schema.slots.size(); ++s) {
    if (static_cast<int>(s) == slot) continue;
    for (std::size_t v = 0; v < g.schema.slots[s].values.size(); ++v)
      eq_rows.push_back(detail::LogitRow(g, static_cast<int>(s), static_cast<int>(v)));
  }
  const int n = g.layers() * g.dims();
  Eigen::MatrixXd eq(eq_rows.size(), n);
  for (std::size_t i = 0; i < eq_rows.size(); ++i) eq.row(i) = eq_rows[i];

  const auto logits = SlotLogits(g, z)[slot];
  const Eigen::VectorXd target_row = detail::LogitRow(g, slot, target_value);
  Eigen::MatrixXd ineq(nv - 1, n);
  Eigen::VectorXd b(nv - 1);
  int r = 0;
  for (int v = 0; v < nv; ++v) {
    if (v == target_value) continue;
    ineq.row(r) = target_row - detail::LogitRow(g, slot, v);
    b(r) = g.params.decision_margin - (logits(target_value) - logits(v));
    ++r;
  }
  const Eigen::VectorXd x = detail::MinNormWithInequalities(eq, ineq, b);
  return Direction{Unflatten(x, g.layers(), g.dims()),
                   DirectionKind::kAttribute};
}

// The oracle direction taken from the neutral code z = 0, where every logit
// ties; independent of z.
inline Direction AttributeAxis(const Generator& g, int slot, int value) {
  return OracleAttributeDirection(g, slot, value,
                                  LatentCode::Zero(g.layers(), g.dims()));
}

// A code that renders `a` with every slot exactly at the decision margin:
// base + the minimum-norm shift satisfying the margin equalities.
inline LatentCode CanonicalLatent(const Generator& g,
                                  const AttributeAssignment& a,
                                  const LatentCode& base) {
  g.CheckShape(base);
  const auto logits = SlotLogits(g, base);
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  for (std::size_t s = 0; s < g.schema.slots.size(); ++s) {
    const int t = a.values.at(s);
    const Eigen::VectorXd tr = detail::LogitRow(g, static_cast<int>(s), t);
    for (std::size_t v = 0; v < g.schema.slots[s].values.size(); ++v) {
      if (static_cast<int>(v) == t) continue;
      rows.push_back(tr - detail::LogitRow(g, static_cast<int>(s), static_cast<int>(v)));
      rhs.push_back(g.params.decision_margin - (logits[s](t) - logits[s](v)));
    }
  }
  Eigen::MatrixXd G(rows.size(), g.layers() * g.dims());
  Eigen::VectorXd b(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    G.row(i) = rows[i];
    b(i) = rhs[i];
  }
  const Eigen::VectorXd x = G.transpose() * (G * G.transpose()).ldlt().solve(b);
  return LatentCode(base.values + Unflatten(x, g.layers(), g.dims()));
}

inline LatentCode CanonicalLatent(const Generator& g,
                                  const AttributeAssignment& a) {
  return CanonicalLatent(g, a, LatentCode::Zero(g.layers(), g.dims()));
}

// ---------------------------------------------------------------------------
// Latent distance statistics (used to pick the norm threshold).

struct NormStats {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t n_distances = 0;
};

// Draws `n_codes` codes and measures the distance between each consecutive
// pair (n_codes - 1 distances between independent draws).
inline NormStats LatentNormStats(const Generator& g, std::size_t n_codes,
                                 std::uint64_t seed) {
  if (n_codes < 2) throw InvalidArgument("latent_norm_stats needs >= 2 codes");
  const auto codes = SampleLatents(g, MixSeed(seed, "norm-stats"), n_codes);
  NormStats st;
  st.min = std::numeric_limits<double>::infinity();
  st.max = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < codes.size(); ++i) {
    const double d = (codes[i].values - codes[i + 1].values).norm();
    st.min = std::min(st.min, d);
    st.max = std::max(st.max, d);
    sum += d;
  }
  st.n_distances = codes.size() - 1;
  st.mean = sum / static_cast<double>(st.n_distances);
  return st;
}

// ---------------------------------------------------------------------------
// Serialization.

inline constexpr int kGeneratorFormatVersion = 1;

inline Json MatrixToJson(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[j] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

inline Eigen::MatrixXd MatrixFromJson(const Json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return {};
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw InvalidArgument("ragged matrix in checkpoint");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
  }
  return m;
}

inline Json VectorToJson(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}
inline Eigen::VectorXd VectorFromJson(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

inline Json ToJson(const GeneratorParams& p) {
  return {{"layers", p.layers},
          {"dims", p.dims},
          {"layer_weights", p.layer_weights},
          {"gain", p.gain},
          {"temperature", p.temperature},
          {"decision_margin", p.decision_margin},
          {"semantic_scale", p.semantic_scale},
          {"nuisance_scale", p.nuisance_scale},
          {"shear", p.shear},
          {"shading_amplitude", p.shading_amplitude},
          {"exaggeration_onset", p.exaggeration_onset},
          {"exaggeration_rate", p.exaggeration_rate},
          {"exaggeration_contrast", p.exaggeration_contrast},
          {"nuisance_onset", p.nuisance_onset}};
}

inline GeneratorParams GeneratorParamsFromJson(const Json& j) {
  GeneratorParams p;
  p.layers = j.value("layers", p.layers);
  p.dims = j.value("dims", p.dims);
  p.layer_weights = j.value("layer_weights", p.layer_weights);
  p.gain = j.value("gain", p.gain);
  p.temperature = j.value("temperature", p.temperature);
  p.decision_margin = j.value("decision_margin", p.decision_margin);
  p.semantic_scale = j.value("semantic_scale", p.semantic_scale);
  p.nuisance_scale = j.value("nuisance_scale", p.nuisance_scale);
  p.shear = j.value("shear", p.shear);
  p.shading_amplitude = j.value("shading_amplitude", p.shading_amplitude);
  p.exaggeration_onset = j.value("exaggeration_onset", p.exaggeration_onset);
  p.exaggeration_rate = j.value("exaggeration_rate", p.exaggeration_rate);
  p.exaggeration_contrast =
      j.value("exaggeration_contrast", p.exaggeration_contrast);
  p.nuisance_onset = j.value("nuisance_onset", p.nuisance_onset);
  return p;
}

inline Json ToJson(const Generator& g) {
  Json sem = Json::array();
  for (const auto& slot : g.semantic_axes) {
    Json s = Json::array();
    for (const auto& q : slot) s.push_back(VectorToJson(q));
    sem.push_back(s);
  }
  Json nui = Json::array();
  for (const auto& r : g.nuisance_axes) nui.push_back(VectorToJson(r));
  Json shading = Json::array();
  for (const auto& b : g.shading)
    shading.push_back({b.col_freq, b.row_freq, b.row_phase});
  return {{"format_version", kGeneratorFormatVersion},
          {"kind", "generator"},
          {"schema_hash", SchemaHash(g.schema)},
          {"schema", ToJson(g.schema)},
          {"seed", g.seed},
          {"params", ToJson(g.params)},
          {"mixing", MatrixToJson(g.mixing)},
          {"semantic_axes", sem},
          {"nuisance_axes", nui},
          {"shading", shading}};
}

inline Generator GeneratorFromJson(const Json& j,
                                   const std::string& expected_schema_hash = {}) {
  if (j.value("format_version", -1) != kGeneratorFormatVersion)
    throw IoError("unsupported generator checkpoint format version");
  const std::string hash = j.at("schema_hash").get<std::string>();
  if (!expected_schema_hash.empty() && hash != expected_schema_hash)
    throw StageHashMismatch("generator checkpoint schema hash " + hash +
                            " does not match " + expected_schema_hash);
  Generator g;
  g.schema = SchemaFromJson(j.at("schema"));
  if (SchemaHash(g.schema) != hash)
    throw StageHashMismatch("generator checkpoint schema hash is corrupt");
  g.seed = j.at("seed").get<std::uint64_t>();
  g.params = GeneratorParamsFromJson(j.at("params"));
  g.mixing = MatrixFromJson(j.at("mixing"));
  g.mixing_inv = g.mixing.inverse();
  for (const auto& s : j.at("semantic_axes")) {
    std::vector<Eigen::VectorXd> axes;
    for (const auto& q : s) axes.push_back(VectorFromJson(q));
    g.semantic_axes.push_back(axes);
  }
  for (const auto& r : j.at("nuisance_axes"))
    g.nuisance_axes.push_back(VectorFromJson(r));
  for (const auto& b : j.at("shading")) {
    const auto v = b.get<std::vector<double>>();
    g.shading.push_back(ShadingBasis{v.at(0), v.at(1), v.at(2)});
  }
  g.Finalize();
  return g;
}

inline std::string GeneratorHash(const Generator& g) {
  return HashHex(ToJson(g).dump());
}

}  // namespace compt2i
