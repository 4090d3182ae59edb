#include "afnet/net/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "afnet/common.hpp"

namespace afnet::net::kernels {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw PreconditionError(what);
}

}  // namespace

template <class T>
void conv_forward(const Tensor<T>& in, const Kernel& k, int filters, std::span<const T> weights,
                  std::span<const T> bias, bool relu, Tensor<T>& out) {
  const FeatureShape s = in.shape;
  const int cin = s.channels;
  if (weights.size() != conv_weight_count(k, cin, filters))
    throw PreconditionError(fmt::format(
        "channel mismatch: kernel ({},{},{}) x {} filters expects {} weights for {} input "
        "channels, got {}",
        k.height, k.width, k.depth, filters, conv_weight_count(k, cin, filters), cin,
        weights.size()));
  require(bias.size() == static_cast<std::size_t>(filters), "conv bias size mismatch");
  out.reset(in.batch, {s.height, s.width, s.depth, filters});
  const int ph = (k.height - 1) / 2, pw = (k.width - 1) / 2, pd = (k.depth - 1) / 2;
  std::vector<T> acc(filters);
  for (int n = 0; n < in.batch; ++n)
    for (int x = 0; x < s.height; ++x)
      for (int y = 0; y < s.width; ++y)
        for (int z = 0; z < s.depth; ++z) {
          std::copy(bias.begin(), bias.end(), acc.begin());
          for (int p = 0; p < k.height; ++p) {
            const int xi = x + p - ph;
            if (xi < 0 || xi >= s.height) continue;
            for (int q = 0; q < k.width; ++q) {
              const int yi = y + q - pw;
              if (yi < 0 || yi >= s.width) continue;
              for (int r = 0; r < k.depth; ++r) {
                const int zi = z + r - pd;
                if (zi < 0 || zi >= s.depth) continue;
                const T* src = in.data.data() + in.index(n, xi, yi, zi, 0);
                const T* w = weights.data() +
                             static_cast<std::size_t>((p * k.width + q) * k.depth + r) * cin * filters;
                for (int c = 0; c < cin; ++c) {
                  const T v = src[c];
                  if (v == T(0)) continue;
                  const T* wc = w + static_cast<std::size_t>(c) * filters;
                  for (int f = 0; f < filters; ++f) acc[f] += v * wc[f];
                }
              }
            }
          }
          T* dst = out.data.data() + out.index(n, x, y, z, 0);
          for (int f = 0; f < filters; ++f) dst[f] = relu ? std::max(acc[f], T(0)) : acc[f];
        }
}

template <class T>
void conv_backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                   const Kernel& k, int filters, std::span<const T> weights, bool relu,
                   std::span<T> grad_weights, std::span<T> grad_bias, Tensor<T>* grad_in) {
  const FeatureShape s = in.shape;
  const int cin = s.channels;
  require(grad_weights.size() == weights.size(), "conv grad weight size mismatch");
  const int ph = (k.height - 1) / 2, pw = (k.width - 1) / 2, pd = (k.depth - 1) / 2;
  std::vector<T> g(filters);
  for (int n = 0; n < in.batch; ++n)
    for (int x = 0; x < s.height; ++x)
      for (int y = 0; y < s.width; ++y)
        for (int z = 0; z < s.depth; ++z) {
          const std::size_t o = out.index(n, x, y, z, 0);
          bool any = false;
          for (int f = 0; f < filters; ++f) {
            g[f] = (relu && !(out.data[o + f] > T(0))) ? T(0) : grad_out.data[o + f];
            any = any || g[f] != T(0);
          }
          if (!any) continue;
          for (int f = 0; f < filters; ++f) grad_bias[f] += g[f];
          for (int p = 0; p < k.height; ++p) {
            const int xi = x + p - ph;
            if (xi < 0 || xi >= s.height) continue;
            for (int q = 0; q < k.width; ++q) {
              const int yi = y + q - pw;
              if (yi < 0 || yi >= s.width) continue;
              for (int r = 0; r < k.depth; ++r) {
                const int zi = z + r - pd;
                if (zi < 0 || zi >= s.depth) continue;
                const std::size_t src_off = in.index(n, xi, yi, zi, 0);
                const T* src = in.data.data() + src_off;
                const std::size_t w_off =
                    static_cast<std::size_t>((p * k.width + q) * k.depth + r) * cin * filters;
                const T* w = weights.data() + w_off;
                T* gw = grad_weights.data() + w_off;
                T* gin = grad_in ? grad_in->data.data() + src_off : nullptr;
                for (int c = 0; c < cin; ++c) {
                  const T v = src[c];
                  const std::size_t co = static_cast<std::size_t>(c) * filters;
                  if (v != T(0)) {
                    T* gwc = gw + co;
                    for (int f = 0; f < filters; ++f) gwc[f] += v * g[f];
                  }
                  if (gin) {
                    const T* wc = w + co;
                    T sum = 0;
                    for (int f = 0; f < filters; ++f) sum += wc[f] * g[f];
                    gin[c] += sum;
                  }
                }
              }
            }
          }
        }
}

template <class T>
void max_pool_forward(const Tensor<T>& in, const Kernel& k, Tensor<T>& out,
                      std::vector<std::uint32_t>& argmax) {
  const FeatureShape s = in.shape;
  out.reset(in.batch, s);
  argmax.assign(out.data.size(), 0);
  const int ph = (k.height - 1) / 2, pw = (k.width - 1) / 2;
  for (int n = 0; n < in.batch; ++n)
    for (int x = 0; x < s.height; ++x)
      for (int y = 0; y < s.width; ++y)
        for (int z = 0; z < s.depth; ++z)
          for (int c = 0; c < s.channels; ++c) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_idx = 0;
            for (int p = 0; p < k.height; ++p) {
              const int xi = x + p - ph;
              if (xi < 0 || xi >= s.height) continue;
              for (int q = 0; q < k.width; ++q) {
                const int yi = y + q - pw;
                if (yi < 0 || yi >= s.width) continue;
                const std::size_t idx = in.index(n, xi, yi, z, c);
                if (in.data[idx] > best) {
                  best = in.data[idx];
                  best_idx = idx;
                }
              }
            }
            const std::size_t o = out.index(n, x, y, z, c);
            out.data[o] = best;
            argmax[o] = static_cast<std::uint32_t>(best_idx);
          }
}

template <class T>
void max_pool_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                       Tensor<T>& grad_in) {
  for (std::size_t o = 0; o < grad_out.data.size(); ++o) grad_in.data[argmax[o]] += grad_out.data[o];
}

FeatureShape fold_shape(const FeatureShape& s) {
  return {s.height, s.width, 1, s.depth * s.channels};
}

template <class T>
void concat_channels(std::span<const Tensor<T>* const> inputs, Tensor<T>& out) {
  require(!inputs.empty(), "concat needs inputs");
  FeatureShape s = inputs[0]->shape;
  int total = 0;
  for (const auto* t : inputs) {
    if (t->shape.height != s.height || t->shape.width != s.width || t->shape.depth != s.depth ||
        t->batch != inputs[0]->batch)
      throw PreconditionError("concat inputs differ in batch or spatial extent");
    total += t->shape.channels;
  }
  s.channels = total;
  out.reset(inputs[0]->batch, s);
  const std::size_t rows = static_cast<std::size_t>(out.batch) * s.positions();
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.data.data() + r * total;
    for (const auto* t : inputs) {
      const int c = t->shape.channels;
      const T* src = t->data.data() + r * c;
      dst = std::copy(src, src + c, dst);
    }
  }
}

template <class T>
void concat_channels_backward(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_inputs) {
  const int total = grad_out.shape.channels;
  const std::size_t rows = static_cast<std::size_t>(grad_out.batch) * grad_out.shape.positions();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = grad_out.data.data() + r * total;
    for (auto* g : grad_inputs) {
      const int c = g->shape.channels;
      T* dst = g->data.data() + r * c;
      for (int i = 0; i < c; ++i) dst[i] += src[i];
      src += c;
    }
  }
}

template <class T>
void dense_forward(const Tensor<T>& in, int units, std::span<const T> weights,
                   std::span<const T> bias, Tensor<T>& out) {
  const std::size_t features = in.sample_size();
  if (weights.size() != features * units)
    throw PreconditionError(fmt::format("dense layer expects {} inputs, got {}",
                                        weights.size() / std::max(units, 1), features));
  out.reset(in.batch, {1, 1, 1, units});
  for (int n = 0; n < in.batch; ++n) {
    T* o = out.data.data() + static_cast<std::size_t>(n) * units;
    std::copy(bias.begin(), bias.end(), o);
    const T* x = in.data.data() + n * features;
    for (std::size_t f = 0; f < features; ++f) {
      const T v = x[f];
      if (v == T(0)) continue;
      const T* w = weights.data() + f * units;
      for (int u = 0; u < units; ++u) o[u] += v * w[u];
    }
  }
}

template <class T>
void dense_backward(const Tensor<T>& in, const Tensor<T>& grad_out, int units,
                    std::span<const T> weights, std::span<T> grad_weights,
                    std::span<T> grad_bias, Tensor<T>* grad_in) {
  const std::size_t features = in.sample_size();
  for (int n = 0; n < in.batch; ++n) {
    const T* g = grad_out.data.data() + static_cast<std::size_t>(n) * units;
    for (int u = 0; u < units; ++u) grad_bias[u] += g[u];
    const T* x = in.data.data() + n * features;
    T* gi = grad_in ? grad_in->data.data() + n * features : nullptr;
    for (std::size_t f = 0; f < features; ++f) {
      const T* w = weights.data() + f * units;
      T* gw = grad_weights.data() + f * units;
      const T v = x[f];
      if (v != T(0))
        for (int u = 0; u < units; ++u) gw[u] += v * g[u];
      if (gi) {
        T sum = 0;
        for (int u = 0; u < units; ++u) sum += w[u] * g[u];
        gi[f] += sum;
      }
    }
  }
}

template <class T>
T gate_sigmoid(T z) noexcept {
  // The full gate is a product of two of these, so each factor stays at or
  // above sqrt(min) to keep the product representable.
  static const T lo = std::sqrt(std::numeric_limits<T>::min());
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
  const T s = T(1) / (T(1) + std::exp(-z));
  return std::clamp(s, lo, hi);
}

AttentionLayout attention_layout(const AttentionSpec& spec, const FeatureShape& trunk,
                                 const FeatureShape& skip) {
  AttentionLayout l;
  l.trunk_channels = trunk.channels;
  l.skip_channels = skip.channels;
  const int descriptor = trunk.channels + skip.channels;
  l.hidden = spec.hidden_units(descriptor);
  if (spec.has_channel()) {
    l.channel_params = static_cast<std::size_t>(descriptor) * l.hidden + l.hidden +
                       static_cast<std::size_t>(l.hidden) * skip.channels + skip.channels;
  }
  l.spatial_kernel = {3, 3, trunk.depth > 1 ? 3 : 1};
  if (spec.has_spatial()) l.spatial_params = conv_weight_count(l.spatial_kernel, 4, 1) + 1;
  return l;
}

template <class T>
void attention_gate_forward(const Tensor<T>& trunk, const Tensor<T>& skip, const AttentionSpec& spec,
                            std::span<const T> params, AttentionCache<T>& cache) {
  const FeatureShape ts = trunk.shape, ss = skip.shape;
  if (ts.height != ss.height || ts.width != ss.width || ts.depth != ss.depth ||
      trunk.batch != skip.batch)
    throw PreconditionError(fmt::format(
        "attention fuse: incompatible extents trunk {}x{}x{} vs skip {}x{}x{}", ts.height, ts.width,
        ts.depth, ss.height, ss.width, ss.depth));
  const AttentionLayout l = attention_layout(spec, ts, ss);
  require(params.size() == l.total(), "attention parameter count mismatch");
  const int batch = trunk.batch;
  const int ct = ts.channels, cs = ss.channels, hid = l.hidden;
  const std::size_t positions = ts.positions();
  const int desc_n = ct + cs;

  cache.gate.reset(batch, ss);
  std::fill(cache.gate.data.begin(), cache.gate.data.end(), T(1));

  if (spec.has_channel()) {
    const T* w1 = params.data();
    const T* b1 = w1 + static_cast<std::size_t>(desc_n) * hid;
    const T* w2 = b1 + hid;
    const T* b2 = w2 + static_cast<std::size_t>(hid) * cs;
    cache.descriptor.assign(static_cast<std::size_t>(batch) * desc_n, T(0));
    cache.hidden_pre.assign(static_cast<std::size_t>(batch) * hid, T(0));
    cache.hidden.assign(static_cast<std::size_t>(batch) * hid, T(0));
    cache.channel_gate.assign(static_cast<std::size_t>(batch) * cs, T(0));
    for (int n = 0; n < batch; ++n) {
      T* desc = cache.descriptor.data() + static_cast<std::size_t>(n) * desc_n;
      for (std::size_t pos = 0; pos < positions; ++pos) {
        const T* tv = trunk.data.data() + (n * positions + pos) * ct;
        const T* sv = skip.data.data() + (n * positions + pos) * cs;
        for (int c = 0; c < ct; ++c) desc[c] += tv[c];
        for (int c = 0; c < cs; ++c) desc[ct + c] += sv[c];
      }
      for (int c = 0; c < desc_n; ++c) desc[c] /= static_cast<T>(positions);
      T* hp = cache.hidden_pre.data() + static_cast<std::size_t>(n) * hid;
      T* h = cache.hidden.data() + static_cast<std::size_t>(n) * hid;
      std::copy(b1, b1 + hid, hp);
      for (int d = 0; d < desc_n; ++d)
        for (int j = 0; j < hid; ++j) hp[j] += desc[d] * w1[static_cast<std::size_t>(d) * hid + j];
      for (int j = 0; j < hid; ++j) h[j] = std::max(hp[j], T(0));
      T* gc = cache.channel_gate.data() + static_cast<std::size_t>(n) * cs;
      std::copy(b2, b2 + cs, gc);
      for (int j = 0; j < hid; ++j)
        for (int c = 0; c < cs; ++c) gc[c] += h[j] * w2[static_cast<std::size_t>(j) * cs + c];
      for (int c = 0; c < cs; ++c) gc[c] = gate_sigmoid(gc[c]);
      for (std::size_t pos = 0; pos < positions; ++pos) {
        T* g = cache.gate.data.data() + (n * positions + pos) * cs;
        for (int c = 0; c < cs; ++c) g[c] *= gc[c];
      }
    }
  }

  if (spec.has_spatial()) {
    const T* ws = params.data() + l.channel_params;
    const std::size_t wcount = conv_weight_count(l.spatial_kernel, 4, 1);
    cache.spatial_maps.reset(batch, {ts.height, ts.width, ts.depth, 4});
    cache.max_channel.assign(static_cast<std::size_t>(batch) * positions * 2, 0);
    for (int n = 0; n < batch; ++n)
      for (std::size_t pos = 0; pos < positions; ++pos) {
        const std::size_t row = n * positions + pos;
        T* m = cache.spatial_maps.data.data() + row * 4;
        auto reduce = [&](const T* v, int count, T& mean, T& mx, std::uint32_t& arg) {
          T sum = 0;
          mx = v[0];
          arg = 0;
          for (int c = 0; c < count; ++c) {
            sum += v[c];
            if (v[c] > mx) {
              mx = v[c];
              arg = static_cast<std::uint32_t>(c);
            }
          }
          mean = sum / static_cast<T>(count);
        };
        reduce(trunk.data.data() + row * ct, ct, m[0], m[1], cache.max_channel[row * 2]);
        reduce(skip.data.data() + row * cs, cs, m[2], m[3], cache.max_channel[row * 2 + 1]);
      }
    conv_forward<T>(cache.spatial_maps, l.spatial_kernel, 1, std::span<const T>(ws, wcount),
                    std::span<const T>(ws + wcount, 1), false, cache.spatial_gate);
    for (auto& v : cache.spatial_gate.data) v = gate_sigmoid(v);
    for (std::size_t row = 0; row < static_cast<std::size_t>(batch) * positions; ++row) {
      const T gp = cache.spatial_gate.data[row];
      T* g = cache.gate.data.data() + row * cs;
      for (int c = 0; c < cs; ++c) g[c] *= gp;
    }
  }
}

template <class T>
void fuse_with_gate(const Tensor<T>& trunk, const Tensor<T>& skip, const Tensor<T>& gate,
                    Tensor<T>& out) {
  require(gate.data.size() == skip.data.size(), "gate extent must equal skip extent");
  const FeatureShape ts = trunk.shape;
  if (ts.height != skip.shape.height || ts.width != skip.shape.width ||
      ts.depth != skip.shape.depth || trunk.batch != skip.batch)
    throw PreconditionError("attention fuse: incompatible trunk/skip extents");
  const int ct = ts.channels, cs = skip.shape.channels;
  out.reset(trunk.batch, {ts.height, ts.width, ts.depth, ct + cs});
  const std::size_t rows = static_cast<std::size_t>(trunk.batch) * ts.positions();
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.data.data() + r * (ct + cs);
    const T* tv = trunk.data.data() + r * ct;
    const T* sv = skip.data.data() + r * cs;
    const T* gv = gate.data.data() + r * cs;
    std::copy(tv, tv + ct, dst);
    for (int c = 0; c < cs; ++c) dst[ct + c] = gv[c] * sv[c];
  }
}

template <class T>
void attention_fuse_backward(const Tensor<T>& trunk, const Tensor<T>& skip,
                             const AttentionSpec& spec, std::span<const T> params,
                             const AttentionCache<T>& cache, const Tensor<T>& grad_out,
                             std::span<T> grad_params, Tensor<T>& grad_trunk,
                             Tensor<T>& grad_skip) {
  const AttentionLayout l = attention_layout(spec, trunk.shape, skip.shape);
  const int batch = trunk.batch;
  const int ct = trunk.shape.channels, cs = skip.shape.channels, hid = l.hidden;
  const int desc_n = ct + cs;
  const std::size_t positions = trunk.shape.positions();
  const std::size_t rows = static_cast<std::size_t>(batch) * positions;

  // d(loss)/d(gate) element-wise; reduced below into channel/spatial parts.
  std::vector<T> d_gate(rows * cs);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* go = grad_out.data.data() + r * (ct + cs);
    T* gt = grad_trunk.data.data() + r * ct;
    for (int c = 0; c < ct; ++c) gt[c] += go[c];
    const T* sv = skip.data.data() + r * cs;
    const T* gv = cache.gate.data.data() + r * cs;
    T* gs = grad_skip.data.data() + r * cs;
    for (int c = 0; c < cs; ++c) {
      gs[c] += go[ct + c] * gv[c];
      d_gate[r * cs + c] = go[ct + c] * sv[c];
    }
  }

  if (spec.has_channel()) {
    const T* w1 = params.data();
    const T* w2 = w1 + static_cast<std::size_t>(desc_n) * hid + hid;
    T* gw1 = grad_params.data();
    T* gb1 = gw1 + static_cast<std::size_t>(desc_n) * hid;
    T* gw2 = gb1 + hid;
    T* gb2 = gw2 + static_cast<std::size_t>(hid) * cs;
    std::vector<T> dz2(cs), dz1(hid), ddesc(desc_n);
    for (int n = 0; n < batch; ++n) {
      const T* gc = cache.channel_gate.data() + static_cast<std::size_t>(n) * cs;
      std::fill(dz2.begin(), dz2.end(), T(0));
      for (std::size_t pos = 0; pos < positions; ++pos) {
        const std::size_t r = n * positions + pos;
        const T gp = spec.has_spatial() ? cache.spatial_gate.data[r] : T(1);
        for (int c = 0; c < cs; ++c) dz2[c] += d_gate[r * cs + c] * gp;
      }
      for (int c = 0; c < cs; ++c) dz2[c] *= gc[c] * (T(1) - gc[c]);
      const T* h = cache.hidden.data() + static_cast<std::size_t>(n) * hid;
      const T* hp = cache.hidden_pre.data() + static_cast<std::size_t>(n) * hid;
      for (int c = 0; c < cs; ++c) gb2[c] += dz2[c];
      for (int j = 0; j < hid; ++j) {
        T sum = 0;
        for (int c = 0; c < cs; ++c) {
          gw2[static_cast<std::size_t>(j) * cs + c] += h[j] * dz2[c];
          sum += w2[static_cast<std::size_t>(j) * cs + c] * dz2[c];
        }
        dz1[j] = hp[j] > T(0) ? sum : T(0);
      }
      const T* desc = cache.descriptor.data() + static_cast<std::size_t>(n) * desc_n;
      for (int j = 0; j < hid; ++j) gb1[j] += dz1[j];
      for (int d = 0; d < desc_n; ++d) {
        T sum = 0;
        for (int j = 0; j < hid; ++j) {
          gw1[static_cast<std::size_t>(d) * hid + j] += desc[d] * dz1[j];
          sum += w1[static_cast<std::size_t>(d) * hid + j] * dz1[j];
        }
        ddesc[d] = sum / static_cast<T>(positions);
      }
      for (std::size_t pos = 0; pos < positions; ++pos) {
        const std::size_t r = n * positions + pos;
        T* gt = grad_trunk.data.data() + r * ct;
        T* gs = grad_skip.data.data() + r * cs;
        for (int c = 0; c < ct; ++c) gt[c] += ddesc[c];
        for (int c = 0; c < cs; ++c) gs[c] += ddesc[ct + c];
      }
    }
  }

  if (spec.has_spatial()) {
    Tensor<T> dz(batch, {trunk.shape.height, trunk.shape.width, trunk.shape.depth, 1});
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gc = spec.has_channel()
                        ? cache.channel_gate.data() + (r / positions) * static_cast<std::size_t>(cs)
                        : nullptr;
      T sum = 0;
      for (int c = 0; c < cs; ++c) sum += d_gate[r * cs + c] * (gc ? gc[c] : T(1));
      const T gp = cache.spatial_gate.data[r];
      dz.data[r] = sum * gp * (T(1) - gp);
    }
    const std::size_t wcount = conv_weight_count(l.spatial_kernel, 4, 1);
    const T* ws = params.data() + l.channel_params;
    T* gws = grad_params.data() + l.channel_params;
    Tensor<T> d_maps(batch, cache.spatial_maps.shape);
    conv_backward<T>(cache.spatial_maps, dz, dz, l.spatial_kernel, 1,
                     std::span<const T>(ws, wcount), false, std::span<T>(gws, wcount),
                     std::span<T>(gws + wcount, 1), &d_maps);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dm = d_maps.data.data() + r * 4;
      T* gt = grad_trunk.data.data() + r * ct;
      T* gs = grad_skip.data.data() + r * cs;
      for (int c = 0; c < ct; ++c) gt[c] += dm[0] / static_cast<T>(ct);
      gt[cache.max_channel[r * 2]] += dm[1];
      for (int c = 0; c < cs; ++c) gs[c] += dm[2] / static_cast<T>(cs);
      gs[cache.max_channel[r * 2 + 1]] += dm[3];
    }
  }
}

template <class T>
void softmax(std::span<const T> logits, int classes, std::span<T> probs) {
  const std::size_t rows = logits.size() / classes;
  for (std::size_t n = 0; n < rows; ++n) {
    const T* z = logits.data() + n * classes;
    T* p = probs.data() + n * classes;
    const double mx = *std::max_element(z, z + classes);
    double sum = 0;
    for (int c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(z[c]) - mx);
    for (int c = 0; c < classes; ++c)
      p[c] = static_cast<T>(std::exp(static_cast<double>(z[c]) - mx) / sum);
  }
}

template <class T>
double softmax_cross_entropy(std::span<const T> logits, int classes, std::span<const int> labels,
                             std::span<T> probs, std::span<T> grad_logits) {
  const std::size_t rows = labels.size();
  require(logits.size() == rows * classes, "logit/label count mismatch");
  softmax<T>(logits, classes, probs);
  double loss = 0;
  for (std::size_t n = 0; n < rows; ++n) {
    const T* z = logits.data() + n * classes;
    const double mx = *std::max_element(z, z + classes);
    double sum = 0;
    for (int c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(z[c]) - mx);
    loss += -(static_cast<double>(z[labels[n]]) - mx - std::log(sum));
  }
  const double inv = 1.0 / static_cast<double>(rows);
  if (!grad_logits.empty()) {
    for (std::size_t n = 0; n < rows; ++n)
      for (int c = 0; c < classes; ++c) {
        const double target = c == labels[n] ? 1.0 : 0.0;
        grad_logits[n * classes + c] =
            static_cast<T>((static_cast<double>(probs[n * classes + c]) - target) * inv);
      }
  }
  return loss * inv;
}

#define AFNET_INSTANTIATE_KERNELS(T)                                                            \
  template void conv_forward<T>(const Tensor<T>&, const Kernel&, int, std::span<const T>,       \
                                std::span<const T>, bool, Tensor<T>&);                          \
  template void conv_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                 const Kernel&, int, std::span<const T>, bool, std::span<T>,    \
                                 std::span<T>, Tensor<T>*);                                     \
  template void max_pool_forward<T>(const Tensor<T>&, const Kernel&, Tensor<T>&,                \
                                    std::vector<std::uint32_t>&);                               \
  template void max_pool_backward<T>(const Tensor<T>&, const std::vector<std::uint32_t>&,       \
                                     Tensor<T>&);                                               \
  template void concat_channels<T>(std::span<const Tensor<T>* const>, Tensor<T>&);              \
  template void concat_channels_backward<T>(const Tensor<T>&, std::span<Tensor<T>* const>);     \
  template void dense_forward<T>(const Tensor<T>&, int, std::span<const T>, std::span<const T>, \
                                 Tensor<T>&);                                                   \
  template void dense_backward<T>(const Tensor<T>&, const Tensor<T>&, int, std::span<const T>,  \
                                  std::span<T>, std::span<T>, Tensor<T>*);                      \
  template T gate_sigmoid<T>(T) noexcept;                                                       \
  template void attention_gate_forward<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                          const AttentionSpec&, std::span<const T>,             \
                                          AttentionCache<T>&);                                  \
  template void fuse_with_gate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                  Tensor<T>&);                                                  \
  template void attention_fuse_backward<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                           const AttentionSpec&, std::span<const T>,            \
                                           const AttentionCache<T>&, const Tensor<T>&,          \
                                           std::span<T>, Tensor<T>&, Tensor<T>&);               \
  template void softmax<T>(std::span<const T>, int, std::span<T>);                              \
  template double softmax_cross_entropy<T>(std::span<const T>, int, std::span<const int>,       \
                                           std::span<T>, std::span<T>);

AFNET_INSTANTIATE_KERNELS(float)
AFNET_INSTANTIATE_KERNELS(double)

#undef AFNET_INSTANTIATE_KERNELS

}  // namespace afnet::net::kernels
