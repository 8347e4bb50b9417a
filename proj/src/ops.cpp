#include "hdnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "hdnet/errors.hpp"

namespace hdnet {

namespace {

// A parent participates in the sweep iff backward() sized its grad buffer.
bool wants_grad(const detail::TensorNode& n) { return !n.grad.empty(); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": operand shapes differ");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(*p)) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (wants_grad(pa)) pa.grad[i] += self.grad[i];
      if (wants_grad(pb)) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (wants_grad(pa)) pa.grad[i] += self.grad[i] * pb.values[i];
      if (wants_grad(pb)) pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= s;
  return make_op(a.shape(), std::move(out), {a}, [s](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * s;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = std::max(v, 0.0);
  return make_op(a.shape(), std::move(out), {a}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.values[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make_op(a.shape(), std::move(out), {a}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.values[i];
      p.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor abs_val(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = std::fabs(v);
  return make_op(a.shape(), std::move(out), {a}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = p.values[i];
      if (x > 0.0)
        p.grad[i] += self.grad[i];
      else if (x < 0.0)
        p.grad[i] -= self.grad[i];
    }
  });
}

Tensor pow_const(const Tensor& a, double e) {
  if (e == 1.0) {
    return make_op(a.shape(), a.values(), {a}, [](detail::TensorNode& self) {
      auto& p = *self.parents[0];
      if (!wants_grad(p)) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
  }
  std::vector<double> out(a.values());
  for (double& v : out) v = std::pow(v, e);
  return make_op(a.shape(), std::move(out), {a}, [e](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = p.values[i];
      if (x > 0.0) p.grad[i] += self.grad[i] * e * std::pow(x, e - 1.0);
      // x == 0 with e < 1 has an unbounded one-sided derivative; the
      // subgradient 0 is used so losses stay finite at exact matches.
    }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op({1}, {acc}, {a}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(a.size());
  return make_op({1}, {acc * inv_n}, {a}, [inv_n](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (double& g : p.grad) g += self.grad[0] * inv_n;
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (numel(shape) != a.size()) throw ContractError("reshape: element count mismatch");
  return make_op(std::move(shape), a.values(), {a}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int groups) {
  if (input.rank() != 3) throw ContractError("conv2d: input must be [C,H,W]");
  if (weight.rank() != 4) throw ContractError("conv2d: weight must be [C_out,C_in/g,k,k]");
  if (bias.rank() != 1) throw ContractError("conv2d: bias must be [C_out]");
  if (stride < 1 || padding < 0 || groups < 1)
    throw ContractError("conv2d: invalid stride/padding/groups");

  const int c_in = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int c_out = weight.shape()[0], c_pg = weight.shape()[1];
  const int k = weight.shape()[2];
  if (weight.shape()[3] != k) throw ContractError("conv2d: kernel must be square");
  if (c_in % groups != 0 || c_out % groups != 0)
    throw ContractError("conv2d: channels not divisible by groups");
  if (c_pg != c_in / groups)
    throw ContractError("conv2d: weight channel extent disagrees with groups");
  if (bias.shape()[0] != c_out) throw ContractError("conv2d: bias length mismatch");

  const int h_out = (h + 2 * padding - k) / stride + 1;
  const int w_out = (w + 2 * padding - k) / stride + 1;
  if (h_out < 1 || w_out < 1) throw ContractError("conv2d: empty output");
  const int co_pg = c_out / groups;

  const auto& in = input.values();
  const auto& wt = weight.values();
  const auto& bs = bias.values();
  std::vector<double> out(static_cast<std::size_t>(c_out) * h_out * w_out);

  for (int co = 0; co < c_out; ++co) {
    const int gi = co / co_pg;
    for (int ho = 0; ho < h_out; ++ho) {
      for (int wo = 0; wo < w_out; ++wo) {
        double acc = bs[co];
        for (int cl = 0; cl < c_pg; ++cl) {
          const int ci = gi * c_pg + cl;
          for (int kh = 0; kh < k; ++kh) {
            const int hi = ho * stride - padding + kh;
            if (hi < 0 || hi >= h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int wi = wo * stride - padding + kw;
              if (wi < 0 || wi >= w) continue;
              acc += in[(static_cast<std::size_t>(ci) * h + hi) * w + wi] *
                     wt[((static_cast<std::size_t>(co) * c_pg + cl) * k + kh) * k + kw];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * h_out + ho) * w_out + wo] = acc;
      }
    }
  }

  auto backprop = [=](detail::TensorNode& self) {
    auto& pin = *self.parents[0];
    auto& pwt = *self.parents[1];
    auto& pbs = *self.parents[2];
    const bool gi_in = wants_grad(pin), gi_wt = wants_grad(pwt), gi_bs = wants_grad(pbs);
    for (int co = 0; co < c_out; ++co) {
      const int grp = co / co_pg;
      for (int ho = 0; ho < h_out; ++ho) {
        for (int wo = 0; wo < w_out; ++wo) {
          const double g = self.grad[(static_cast<std::size_t>(co) * h_out + ho) * w_out + wo];
          if (g == 0.0) continue;
          if (gi_bs) pbs.grad[co] += g;
          if (!gi_in && !gi_wt) continue;
          for (int cl = 0; cl < c_pg; ++cl) {
            const int ci = grp * c_pg + cl;
            for (int kh = 0; kh < k; ++kh) {
              const int hi = ho * stride - padding + kh;
              if (hi < 0 || hi >= h) continue;
              for (int kw = 0; kw < k; ++kw) {
                const int wi = wo * stride - padding + kw;
                if (wi < 0 || wi >= w) continue;
                const std::size_t ii = (static_cast<std::size_t>(ci) * h + hi) * w + wi;
                const std::size_t wi2 =
                    ((static_cast<std::size_t>(co) * c_pg + cl) * k + kh) * k + kw;
                if (gi_in) pin.grad[ii] += g * pwt.values[wi2];
                if (gi_wt) pwt.grad[wi2] += g * pin.values[ii];
              }
            }
          }
        }
      }
    }
  };

  return make_op({c_out, h_out, w_out}, std::move(out), {input, weight, bias},
                 std::move(backprop));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ContractError("matmul: operands must be 2-D");
  const int m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k) throw ContractError("matmul: inner dimensions differ");
  const int n = b.shape()[1];

  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += av[i * k + p] * bv[p * n + j];
      out[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }

  return make_op({m, n}, std::move(out), {a, b}, [m, n, k](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (wants_grad(pa)) {
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += self.grad[i * n + j] * pb.values[p * n + j];
          pa.grad[i * k + p] += acc;
        }
    }
    if (wants_grad(pb)) {
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i) acc += pa.values[i * k + p] * self.grad[i * n + j];
          pb.grad[p * n + j] += acc;
        }
    }
  });
}

Tensor softmax(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw ContractError("softmax: axis out of range");
  const auto& shape = a.shape();
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= shape[i];
  const int n = shape[axis];

  const auto& av = a.values();
  std::vector<double> out(a.size());
  for (int o = 0; o < outer; ++o) {
    for (int j = 0; j < inner; ++j) {
      double mx = av[(static_cast<std::size_t>(o) * n) * inner + j];
      for (int i = 1; i < n; ++i)
        mx = std::max(mx, av[(static_cast<std::size_t>(o) * n + i) * inner + j]);
      double denom = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(o) * n + i) * inner + j;
        out[idx] = std::exp(av[idx] - mx);
        denom += out[idx];
      }
      for (int i = 0; i < n; ++i) out[(static_cast<std::size_t>(o) * n + i) * inner + j] /= denom;
    }
  }

  return make_op(shape, std::move(out), {a}, [outer, inner, n](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (int o = 0; o < outer; ++o) {
      for (int j = 0; j < inner; ++j) {
        double dot = 0.0;
        for (int i = 0; i < n; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(o) * n + i) * inner + j;
          dot += self.grad[idx] * self.values[idx];
        }
        for (int i = 0; i < n; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(o) * n + i) * inner + j;
          p.grad[idx] += self.values[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& a) {
  if (a.rank() != 3) throw ContractError("global_avg_pool: input must be [C,H,W]");
  const int c = a.shape()[0], hw = a.shape()[1] * a.shape()[2];
  const double inv = 1.0 / hw;
  const auto& av = a.values();
  std::vector<double> out(c);
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    for (int i = 0; i < hw; ++i) acc += av[static_cast<std::size_t>(ci) * hw + i];
    out[ci] = acc * inv;
  }
  return make_op({c}, std::move(out), {a}, [c, hw, inv](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < hw; ++i)
        p.grad[static_cast<std::size_t>(ci) * hw + i] += self.grad[ci] * inv;
  });
}

Tensor max_pool3x3(const Tensor& a) {
  if (a.rank() != 3) throw ContractError("max_pool3x3: input must be [C,H,W]");
  const int c = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  const auto& av = a.values();
  std::vector<double> out(a.size());
  std::vector<int> argmax(a.size());
  for (int ci = 0; ci < c; ++ci) {
    for (int ho = 0; ho < h; ++ho) {
      for (int wo = 0; wo < w; ++wo) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int kh = -1; kh <= 1; ++kh) {
          const int hi = ho + kh;
          if (hi < 0 || hi >= h) continue;
          for (int kw = -1; kw <= 1; ++kw) {
            const int wi = wo + kw;
            if (wi < 0 || wi >= w) continue;
            const int idx = (ci * h + hi) * w + wi;
            if (av[idx] > best) {
              best = av[idx];
              best_idx = idx;
            }
          }
        }
        const int oi = (ci * h + ho) * w + wo;
        out[oi] = best;
        argmax[oi] = best_idx;
      }
    }
  }
  return make_op({c, h, w}, std::move(out), {a},
                 [argmax = std::move(argmax)](detail::TensorNode& self) {
                   auto& p = *self.parents[0];
                   if (!wants_grad(p)) return;
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[argmax[i]] += self.grad[i];
                 });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const int h = parts[0].shape()[1], w = parts[0].shape()[2];
  int c_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 3 || p.shape()[1] != h || p.shape()[2] != w)
      throw ContractError("concat_channels: spatial dims differ");
    c_total += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(c_total) * h * w);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_op({c_total, h, w}, std::move(out), parts, [](detail::TensorNode& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      if (wants_grad(*p))
        for (std::size_t i = 0; i < p->values.size(); ++i) p->grad[i] += self.grad[off + i];
      off += p->values.size();
    }
  });
}

std::vector<Tensor> split_channels(const Tensor& a, int m) {
  if (a.rank() != 3) throw ContractError("split_channels: input must be [C,H,W]");
  const int c = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  if (m < 1 || c % m != 0) throw ContractError("split_channels: channels not divisible by groups");
  const int c_part = c / m;
  const std::size_t part_len = static_cast<std::size_t>(c_part) * h * w;
  std::vector<Tensor> parts;
  parts.reserve(m);
  for (int i = 0; i < m; ++i) {
    const std::size_t off = i * part_len;
    std::vector<double> vals(a.values().begin() + off, a.values().begin() + off + part_len);
    parts.push_back(make_op({c_part, h, w}, std::move(vals), {a},
                            [off](detail::TensorNode& self) {
                              auto& p = *self.parents[0];
                              if (!wants_grad(p)) return;
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                p.grad[off + i] += self.grad[i];
                            }));
  }
  return parts;
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  if (x.rank() != 3 || gate.rank() != 1 || gate.shape()[0] != x.shape()[0])
    throw ContractError("scale_channels: gate must be [C] matching input channels");
  const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  const auto& xv = x.values();
  const auto& gv = gate.values();
  std::vector<double> out(x.size());
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < hw; ++i)
      out[static_cast<std::size_t>(ci) * hw + i] = xv[static_cast<std::size_t>(ci) * hw + i] * gv[ci];
  return make_op(x.shape(), std::move(out), {x, gate}, [c, hw](detail::TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int i = 0; i < hw; ++i) {
        const std::size_t idx = static_cast<std::size_t>(ci) * hw + i;
        if (wants_grad(px)) px.grad[idx] += self.grad[idx] * pg.values[ci];
        acc += self.grad[idx] * px.values[idx];
      }
      if (wants_grad(pg)) pg.grad[ci] += acc;
    }
  });
}

Tensor scale_spatial(const Tensor& x, const Tensor& gate) {
  if (x.rank() != 3 || gate.rank() != 2 || gate.shape()[0] != x.shape()[1] ||
      gate.shape()[1] != x.shape()[2])
    throw ContractError("scale_spatial: gate must be [H,W] matching input dims");
  const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  const auto& xv = x.values();
  const auto& gv = gate.values();
  std::vector<double> out(x.size());
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < hw; ++i)
      out[static_cast<std::size_t>(ci) * hw + i] = xv[static_cast<std::size_t>(ci) * hw + i] * gv[i];
  return make_op(x.shape(), std::move(out), {x, gate}, [c, hw](detail::TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    for (int ci = 0; ci < c; ++ci) {
      for (int i = 0; i < hw; ++i) {
        const std::size_t idx = static_cast<std::size_t>(ci) * hw + i;
        if (wants_grad(px)) px.grad[idx] += self.grad[idx] * pg.values[i];
        if (wants_grad(pg)) pg.grad[i] += self.grad[idx] * px.values[idx];
      }
    }
  });
}

Tensor crop2d(const Tensor& a, int r0, int c0, int rows, int cols) {
  if (a.rank() != 2) throw ContractError("crop2d: input must be [H,W]");
  const int h = a.shape()[0], w = a.shape()[1];
  if (r0 < 0 || c0 < 0 || rows < 1 || cols < 1 || r0 + rows > h || c0 + cols > w)
    throw ContractError("crop2d: window out of bounds");
  const auto& av = a.values();
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(r) * cols + c] = av[static_cast<std::size_t>(r0 + r) * w + (c0 + c)];
  return make_op({rows, cols}, std::move(out), {a},
                 [r0, c0, rows, cols, w](detail::TensorNode& self) {
                   auto& p = *self.parents[0];
                   if (!wants_grad(p)) return;
                   for (int r = 0; r < rows; ++r)
                     for (int c = 0; c < cols; ++c)
                       p.grad[static_cast<std::size_t>(r0 + r) * w + (c0 + c)] +=
                           self.grad[static_cast<std::size_t>(r) * cols + c];
                 });
}

}  // namespace hdnet
