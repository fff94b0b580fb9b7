#pragma once

#include <map>
#include <string>
#include <vector>

#include "dewarp/field.hpp"
#include "dewarp/objective.hpp"
#include "dewarp/raster.hpp"

namespace dewarp {

// Token / feature grid, HWC doubles.
struct TensorMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    TensorMap() = default;
    TensorMap(int h, int w, int c) : height(h), width(w), channels(c) {
        data.assign(static_cast<std::size_t>(h) * w * c, 0.0);
    }

    int tokens() const { return height * width; }
    double* token(int t) { return data.data() + static_cast<std::size_t>(t) * channels; }
    const double* token(int t) const {
        return data.data() + static_cast<std::size_t>(t) * channels;
    }
    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

struct NetworkConfig {
    int input_size = 288;
    int feat_stride = 8;
    int d_model = 256;
    int heads = 4;
    int encoder_layers = 3;
    int decoder_layers = 3;
    int mlp_ratio = 2;
    int spw_window = 2;      // K/V pooling window in all attention blocks
    int seg_hidden = 64;
    double sigma = 0.005;    // mask-bias strength in decoder self-attention
    double gamma = 0.8;      // smooth-mask temperature

    int token_res() const { return input_size / feat_stride; }

    void validate() const {
        if (input_size < 32 || input_size % feat_stride != 0)
            throw invalid_argument("NetworkConfig: input_size must be a multiple of feat_stride");
        if (feat_stride != 8)
            throw invalid_argument("NetworkConfig: feature stride is fixed at 8");
        if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
            throw invalid_argument("NetworkConfig: d_model must divide evenly into heads");
        if (encoder_layers < 1 || decoder_layers != encoder_layers)
            throw invalid_argument("NetworkConfig: decoder must pair one layer per encoder stage");
        if (mlp_ratio < 1 || spw_window < 1 || seg_hidden < 1)
            throw invalid_argument("NetworkConfig: bad expansion/pool parameters");
        int r = token_res();
        for (int i = 1; i < encoder_layers; ++i) {
            if (r % 2 != 0)
                throw invalid_argument("NetworkConfig: token grid must halve per encoder stage");
            r /= 2;
        }
        if (r < 2) throw invalid_argument("NetworkConfig: coarsest grid too small");
        if (!(sigma >= 0.0) || !(gamma > 0.0))
            throw invalid_argument("NetworkConfig: bad sigma/gamma");
    }
};

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    std::size_t count() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
};

struct WeightBundle {
    std::map<std::string, Tensor> params;

    const Tensor& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw data_error("WeightBundle: missing parameter " + name);
        return it->second;
    }
};

// Canonical parameter list; init, I/O and validation all walk this.
inline std::vector<std::pair<std::string, std::vector<int>>> weight_registry(
    const NetworkConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, std::vector<int>>> reg;
    int c = cfg.d_model;
    auto add = [&](const std::string& n, std::vector<int> s) { reg.emplace_back(n, std::move(s)); };

    add("feat.conv0.w", {64, 7, 7, 3});
    add("feat.conv0.b", {64});
    add("feat.conv1.w", {128, 3, 3, 64});
    add("feat.conv1.b", {128});
    add("feat.conv2.w", {c, 3, 3, 128});
    add("feat.conv2.b", {c});
    for (int r = 0; r < 2; ++r) {
        std::string p = "feat.res" + std::to_string(r);
        add(p + ".c0.w", {c, 3, 3, c});
        add(p + ".c0.b", {c});
        add(p + ".c1.w", {c, 3, 3, c});
        add(p + ".c1.b", {c});
    }

    auto add_attn = [&](const std::string& p) {
        add(p + ".wq", {c, c});
        add(p + ".bq", {c});
        add(p + ".wk", {c, c});
        add(p + ".bk", {c});
        add(p + ".wv", {c, c});
        add(p + ".bv", {c});
        add(p + ".wo", {c, c});
        add(p + ".bo", {c});
    };
    auto add_ln = [&](const std::string& p) {
        add(p + ".g", {c});
        add(p + ".b", {c});
    };
    auto add_mlp = [&](const std::string& p) {
        add(p + ".w0", {c * cfg.mlp_ratio, c});
        add(p + ".b0", {c * cfg.mlp_ratio});
        add(p + ".w1", {c, c * cfg.mlp_ratio});
        add(p + ".b1", {c});
    };

    for (int l = 0; l < cfg.encoder_layers; ++l) {
        std::string p = "enc.l" + std::to_string(l);
        add_ln(p + ".ln1");
        add_attn(p + ".attn");
        add_ln(p + ".ln2");
        add_mlp(p + ".mlp");
        if (l + 1 < cfg.encoder_layers) {
            std::string q = "enc.p" + std::to_string(l);
            add(q + ".w", {c, 3, 3, c});
            add(q + ".b", {c});
        }
    }

    for (int i = 0; i < cfg.encoder_layers; ++i) {
        std::string p = "seg.u" + std::to_string(i);
        add(p + ".w", {cfg.seg_hidden, c});
        add(p + ".b", {cfg.seg_hidden});
    }
    add("seg.h0.w", {cfg.seg_hidden, cfg.seg_hidden});
    add("seg.h0.b", {cfg.seg_hidden});
    add("seg.h1.w", {2, cfg.seg_hidden});
    add("seg.h1.b", {2});

    int r0 = cfg.token_res() >> (cfg.decoder_layers - 1);
    add("dec.q", {r0 * r0, c});
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        std::string p = "dec.l" + std::to_string(l);
        add_ln(p + ".ln1");
        add_attn(p + ".msa");
        add_ln(p + ".ln2");
        add_attn(p + ".ca");
        add_ln(p + ".ln3");
        add_mlp(p + ".mlp");
    }
    add("dec.ln.g", {c});
    add("dec.ln.b", {c});
    add("dec.head.w", {2, c});
    add("dec.head.b", {2});

    add("ups.w", {9, cfg.feat_stride, cfg.feat_stride});
    return reg;
}

namespace detail {

inline bool is_ln_gain(const std::string& n) {
    auto pos = n.rfind(".g");
    return pos != std::string::npos && pos == n.size() - 2 && n.find(".ln") != std::string::npos;
}

inline bool is_bias_like(const std::string& n) {
    if (n.size() >= 2 && n.compare(n.size() - 2, 2, ".b") == 0) return true;
    for (const char* s : {".bq", ".bk", ".bv", ".bo", ".b0", ".b1"})
        if (n.size() >= 3 && n.compare(n.size() - 3, 3, s) == 0) return true;
    return false;
}

}  // namespace detail

// Seeded init: LN gains 1, biases and convex-upsample logits 0, everything
// else N(0, 0.02). Values are rounded through f32 so the 32-bit container
// round-trips bit-exactly in both directions.
inline WeightBundle init_weights(const NetworkConfig& cfg, std::uint64_t seed) {
    WeightBundle wb;
    Rng rng(seed, 0x11BDu);
    for (const auto& [name, shape] : weight_registry(cfg)) {
        Tensor t;
        t.shape = shape;
        t.data.resize(t.count());
        if (detail::is_ln_gain(name)) {
            for (double& v : t.data) v = 1.0;
        } else if (name == "ups.w" || detail::is_bias_like(name)) {
            // zeros; convex logits at zero mean uniform neighborhood weights
        } else {
            for (double& v : t.data)
                v = static_cast<double>(static_cast<float>(rng.normal() * 0.02));
        }
        wb.params.emplace(name, std::move(t));
    }
    return wb;
}

inline WeightBundle zero_weights(const NetworkConfig& cfg) {
    WeightBundle wb;
    for (const auto& [name, shape] : weight_registry(cfg)) {
        Tensor t;
        t.shape = shape;
        t.data.assign(t.count(), 0.0);
        wb.params.emplace(name, t);
    }
    return wb;
}

inline void validate_weights(const WeightBundle& wb, const NetworkConfig& cfg) {
    auto reg = weight_registry(cfg);
    if (wb.params.size() != reg.size())
        throw data_error("validate_weights: parameter count mismatch");
    for (const auto& [name, shape] : reg) {
        const Tensor& t = wb.at(name);
        if (t.shape != shape) throw data_error("validate_weights: shape mismatch for " + name);
        if (t.data.size() != t.count())
            throw data_error("validate_weights: payload size mismatch for " + name);
    }
}

// WBDL container, version 1:
//   magic "WBDL", u8 version, u32 entry count; per entry u16 name length,
//   name bytes, u8 rank, u32 dims, then little-endian f32 payload.
inline void save_weights(const std::string& path, const WeightBundle& wb) {
    std::string out;
    out += "WBDL";
    out.push_back(1);
    detail::put_u32le(out, static_cast<std::uint32_t>(wb.params.size()));
    for (const auto& [name, t] : wb.params) {
        if (name.size() > 0xffff) throw invalid_argument("save_weights: name too long");
        out.push_back(static_cast<char>(name.size() & 0xff));
        out.push_back(static_cast<char>((name.size() >> 8) & 0xff));
        out += name;
        out.push_back(static_cast<char>(t.shape.size()));
        for (int d : t.shape) detail::put_u32le(out, static_cast<std::uint32_t>(d));
        for (double v : t.data) detail::put_f32le(out, static_cast<float>(v));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("save_weights: cannot open " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw data_error("save_weights: write failed for " + path);
}

inline WeightBundle load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("load_weights: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 9 || bytes.compare(0, 4, "WBDL") != 0)
        throw data_error("load_weights: bad magic in " + path);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (p[4] != 1) throw data_error("load_weights: unsupported version in " + path);
    std::uint32_t count = detail::get_u32le(p + 5);
    std::size_t off = 9;
    WeightBundle wb;
    auto need = [&](std::size_t n) {
        if (off + n > bytes.size()) throw data_error("load_weights: truncated file " + path);
    };
    for (std::uint32_t e = 0; e < count; ++e) {
        need(2);
        std::size_t name_len = p[off] | (static_cast<std::size_t>(p[off + 1]) << 8);
        off += 2;
        need(name_len + 1);
        std::string name(bytes, off, name_len);
        off += name_len;
        int rank = p[off++];
        Tensor t;
        need(static_cast<std::size_t>(rank) * 4);
        for (int d = 0; d < rank; ++d) {
            t.shape.push_back(static_cast<int>(detail::get_u32le(p + off)));
            off += 4;
        }
        std::size_t n = t.count();
        if (n > (1u << 28)) throw data_error("load_weights: implausible tensor in " + path);
        need(n * 4);
        t.data.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            float f = detail::get_f32le(p + off);
            off += 4;
            if (!std::isfinite(f))
                throw data_error("load_weights: non-finite value in " + path);
            t.data[i] = f;
        }
        if (!wb.params.emplace(std::move(name), std::move(t)).second)
            throw data_error("load_weights: duplicate parameter in " + path);
    }
    if (off != bytes.size()) throw data_error("load_weights: trailing bytes in " + path);
    return wb;
}

// Averaged-over-heads attention matrices, keyed by block.
struct AttentionTrace {
    std::string name;
    int queries = 0;
    int keys = 0;
    std::vector<double> weights;  // queries x keys
};

struct Trace {
    std::vector<AttentionTrace> attn;
};

namespace detail {

inline TensorMap conv2d(const TensorMap& in, const Tensor& w, const Tensor& b, int stride,
                        int pad, bool relu) {
    int co = w.shape[0], kh = w.shape[1], kw = w.shape[2], ci = w.shape[3];
    if (ci != in.channels) throw data_error("conv2d: channel mismatch");
    int oh = (in.height + 2 * pad - kh) / stride + 1;
    int ow = (in.width + 2 * pad - kw) / stride + 1;
    TensorMap out(oh, ow, co);
    for (int oy = 0; oy < oh; ++oy) {
        int iy0 = oy * stride - pad;
        for (int ox = 0; ox < ow; ++ox) {
            int ix0 = ox * stride - pad;
            double* dst = out.token(oy * ow + ox);
            for (int c = 0; c < co; ++c) {
                double acc = b.data[c];
                const double* wc = w.data.data() +
                                   static_cast<std::size_t>(c) * kh * kw * ci;
                for (int ky = 0; ky < kh; ++ky) {
                    int iy = iy0 + ky;
                    if (iy < 0 || iy >= in.height) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        int ix = ix0 + kx;
                        if (ix < 0 || ix >= in.width) continue;
                        const double* src = in.token(iy * in.width + ix);
                        const double* wp = wc + (static_cast<std::size_t>(ky) * kw + kx) * ci;
                        for (int k = 0; k < ci; ++k) acc += wp[k] * src[k];
                    }
                }
                dst[c] = relu && acc < 0.0 ? 0.0 : acc;
            }
        }
    }
    return out;
}

// tokens [N x Cin] times W [Cout x Cin] plus bias.
inline TensorMap linear(const TensorMap& in, const Tensor& w, const Tensor& b) {
    int cout = w.shape[0], cin = w.shape[1];
    if (cin != in.channels) throw data_error("linear: channel mismatch");
    TensorMap out(in.height, in.width, cout);
    int n = in.tokens();
    for (int t = 0; t < n; ++t) {
        const double* src = in.token(t);
        double* dst = out.token(t);
        for (int o = 0; o < cout; ++o) {
            const double* wp = w.data.data() + static_cast<std::size_t>(o) * cin;
            double acc = b.data[o];
            for (int k = 0; k < cin; ++k) acc += wp[k] * src[k];
            dst[o] = acc;
        }
    }
    return out;
}

inline TensorMap layernorm(const TensorMap& in, const Tensor& g, const Tensor& b) {
    TensorMap out(in.height, in.width, in.channels);
    int n = in.tokens(), c = in.channels;
    for (int t = 0; t < n; ++t) {
        const double* src = in.token(t);
        double* dst = out.token(t);
        double mean = 0.0;
        for (int k = 0; k < c; ++k) mean += src[k];
        mean /= c;
        double var = 0.0;
        for (int k = 0; k < c; ++k) var += sqr(src[k] - mean);
        var /= c;
        double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int k = 0; k < c; ++k) dst[k] = (src[k] - mean) * inv * g.data[k] + b.data[k];
    }
    return out;
}

inline void add_inplace(TensorMap& a, const TensorMap& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

// Ceil-windowed box average; window 1 is an exact copy.
inline TensorMap spw_pool(const TensorMap& in, int window) {
    if (window == 1) return in;
    int oh = (in.height + window - 1) / window;
    int ow = (in.width + window - 1) / window;
    TensorMap out(oh, ow, in.channels);
    for (int oy = 0; oy < oh; ++oy) {
        int y0 = oy * window, y1 = std::min(in.height, y0 + window);
        for (int ox = 0; ox < ow; ++ox) {
            int x0 = ox * window, x1 = std::min(in.width, x0 + window);
            double* dst = out.token(oy * ow + ox);
            double inv = 1.0 / ((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const double* src = in.token(y * in.width + x);
                    for (int c = 0; c < in.channels; ++c) dst[c] += src[c];
                }
            for (int c = 0; c < in.channels; ++c) dst[c] *= inv;
        }
    }
    return out;
}

inline std::vector<double> spw_pool_vec(const std::vector<double>& m, int res, int window) {
    if (window == 1) return m;
    int o = (res + window - 1) / window;
    std::vector<double> out(static_cast<std::size_t>(o) * o, 0.0);
    for (int oy = 0; oy < o; ++oy) {
        int y0 = oy * window, y1 = std::min(res, y0 + window);
        for (int ox = 0; ox < o; ++ox) {
            int x0 = ox * window, x1 = std::min(res, x0 + window);
            double acc = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) acc += m[static_cast<std::size_t>(y) * res + x];
            out[static_cast<std::size_t>(oy) * o + ox] = acc / ((y1 - y0) * (x1 - x0));
        }
    }
    return out;
}

// Align-corners bilinear resize of a channel grid.
inline TensorMap resize_bilinear(const TensorMap& in, int oh, int ow) {
    TensorMap out(oh, ow, in.channels);
    double sy = oh > 1 ? (in.height - 1.0) / (oh - 1.0) : 0.0;
    double sx = ow > 1 ? (in.width - 1.0) / (ow - 1.0) : 0.0;
    for (int y = 0; y < oh; ++y) {
        double py = y * sy;
        int y0 = std::min(static_cast<int>(py), in.height - 2 >= 0 ? in.height - 2 : 0);
        double fy = py - y0;
        for (int x = 0; x < ow; ++x) {
            double px = x * sx;
            int x0 = std::min(static_cast<int>(px), in.width - 2 >= 0 ? in.width - 2 : 0);
            double fx = px - x0;
            const double* s00 = in.token(y0 * in.width + x0);
            const double* s01 = in.token(y0 * in.width + std::min(x0 + 1, in.width - 1));
            const double* s10 = in.token(std::min(y0 + 1, in.height - 1) * in.width + x0);
            const double* s11 = in.token(std::min(y0 + 1, in.height - 1) * in.width +
                                         std::min(x0 + 1, in.width - 1));
            double* dst = out.token(y * ow + x);
            for (int c = 0; c < in.channels; ++c)
                dst[c] = s00[c] * (1 - fx) * (1 - fy) + s01[c] * fx * (1 - fy) +
                         s10[c] * (1 - fx) * fy + s11[c] * fx * fy;
        }
    }
    return out;
}

struct AttnParams {
    const Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

inline AttnParams attn_params(const WeightBundle& wb, const std::string& prefix) {
    return {&wb.at(prefix + ".wq"), &wb.at(prefix + ".bq"), &wb.at(prefix + ".wk"),
            &wb.at(prefix + ".bk"), &wb.at(prefix + ".wv"), &wb.at(prefix + ".bv"),
            &wb.at(prefix + ".wo"), &wb.at(prefix + ".bo")};
}

// Multi-head attention with optional mask bias: rows softmax over
// (q.k + sigma * m_q m_k) / sqrt(d_head). The bias term is skipped entirely
// when absent so the no-bias build is bit-identical to sigma = 0.
inline TensorMap attention(const TensorMap& q_grid, const TensorMap& kv_grid,
                           const AttnParams& p, int heads, const std::vector<double>* mq,
                           const std::vector<double>* mk, double sigma, Trace* trace,
                           const std::string& trace_name) {
    int c = q_grid.channels;
    int dh = c / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    TensorMap q = linear(q_grid, *p.wq, *p.bq);
    TensorMap k = linear(kv_grid, *p.wk, *p.bk);
    TensorMap v = linear(kv_grid, *p.wv, *p.bv);
    int nq = q.tokens(), nk = k.tokens();
    bool use_bias = mq != nullptr && mk != nullptr && sigma != 0.0;

    TensorMap mixed(q_grid.height, q_grid.width, c);
    AttentionTrace* tr = nullptr;
    if (trace) {
        trace->attn.push_back({trace_name, nq, nk, {}});
        tr = &trace->attn.back();
        tr->weights.assign(static_cast<std::size_t>(nq) * nk, 0.0);
    }
    std::vector<double> scores(nk);
    for (int h = 0; h < heads; ++h) {
        int off = h * dh;
        for (int i = 0; i < nq; ++i) {
            const double* qi = q.token(i) + off;
            double mx = -1e300;
            for (int j = 0; j < nk; ++j) {
                const double* kj = k.token(j) + off;
                double acc = 0.0;
                for (int d = 0; d < dh; ++d) acc += qi[d] * kj[d];
                if (use_bias) acc += sigma * (*mq)[i] * (*mk)[j];
                acc *= scale;
                scores[j] = acc;
                mx = std::max(mx, acc);
            }
            double denom = 0.0;
            for (int j = 0; j < nk; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                denom += scores[j];
            }
            double inv = 1.0 / denom;
            double* out = mixed.token(i) + off;
            for (int d = 0; d < dh; ++d) out[d] = 0.0;
            for (int j = 0; j < nk; ++j) {
                double a = scores[j] * inv;
                const double* vj = v.token(j) + off;
                for (int d = 0; d < dh; ++d) out[d] += a * vj[d];
                if (tr) tr->weights[static_cast<std::size_t>(i) * nk + j] += a / heads;
            }
        }
    }
    return linear(mixed, *p.wo, *p.bo);
}

inline TensorMap mlp_block(const TensorMap& in, const WeightBundle& wb,
                           const std::string& prefix) {
    TensorMap hidden = linear(in, wb.at(prefix + ".w0"), wb.at(prefix + ".b0"));
    for (double& v : hidden.data) v = gelu(v);
    return linear(hidden, wb.at(prefix + ".w1"), wb.at(prefix + ".b1"));
}

}  // namespace detail

// Convolutional feature stack: 288x288x3 -> 36x36xC at stride 8 (7x7/2 then
// two 3x3/2, then two residual blocks).
inline TensorMap extract_features(const Raster& image, const WeightBundle& wb,
                                  const NetworkConfig& cfg) {
    cfg.validate();
    if (image.height != cfg.input_size || image.width != cfg.input_size ||
        image.channels != 3)
        throw invalid_argument("extract_features: image must be input_size^2 x 3");
    TensorMap x(image.height, image.width, 3);
    x.data = image.data;
    x = detail::conv2d(x, wb.at("feat.conv0.w"), wb.at("feat.conv0.b"), 2, 3, true);
    x = detail::conv2d(x, wb.at("feat.conv1.w"), wb.at("feat.conv1.b"), 2, 1, true);
    x = detail::conv2d(x, wb.at("feat.conv2.w"), wb.at("feat.conv2.b"), 2, 1, true);
    for (int r = 0; r < 2; ++r) {
        std::string p = "feat.res" + std::to_string(r);
        TensorMap y = detail::conv2d(x, wb.at(p + ".c0.w"), wb.at(p + ".c0.b"), 1, 1, true);
        y = detail::conv2d(y, wb.at(p + ".c1.w"), wb.at(p + ".c1.b"), 1, 1, false);
        detail::add_inplace(y, x);
        for (double& v : y.data)
            if (v < 0.0) v = 0.0;
        x = std::move(y);
    }
    return x;
}

struct EncoderOut {
    std::vector<TensorMap> stages;  // E1 (finest) .. E3 (coarsest)
};

// Pre-norm transformer stages with window-pooled K/V; strided 3x3 patch
// embeddings halve the grid between stages.
inline EncoderOut encode(const TensorMap& features, const WeightBundle& wb,
                         const NetworkConfig& cfg, Trace* trace = nullptr) {
    cfg.validate();
    if (features.height != cfg.token_res() || features.width != cfg.token_res() ||
        features.channels != cfg.d_model)
        throw invalid_argument("encode: feature grid does not match the config");
    EncoderOut out;
    TensorMap x = features;
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        std::string p = "enc.l" + std::to_string(l);
        TensorMap t = detail::layernorm(x, wb.at(p + ".ln1.g"), wb.at(p + ".ln1.b"));
        TensorMap pooled = detail::spw_pool(t, cfg.spw_window);
        TensorMap a = detail::attention(t, pooled, detail::attn_params(wb, p + ".attn"),
                                        cfg.heads, nullptr, nullptr, 0.0, trace, p + ".attn");
        detail::add_inplace(x, a);
        t = detail::layernorm(x, wb.at(p + ".ln2.g"), wb.at(p + ".ln2.b"));
        detail::add_inplace(x, detail::mlp_block(t, wb, p + ".mlp"));
        out.stages.push_back(x);
        if (l + 1 < cfg.encoder_layers) {
            std::string q = "enc.p" + std::to_string(l);
            x = detail::conv2d(x, wb.at(q + ".w"), wb.at(q + ".b"), 2, 1, false);
        }
    }
    return out;
}

// Fuses the encoder stages (1x1 reduction + bilinear upsampling to full
// resolution) into 2-channel segmentation logits.
inline Raster segment_foreground(const EncoderOut& enc, const WeightBundle& wb,
                                 const NetworkConfig& cfg) {
    if (enc.stages.empty()) throw invalid_argument("segment_foreground: empty encoder output");
    int s = cfg.input_size;
    TensorMap fused(s, s, cfg.seg_hidden);
    for (std::size_t i = 0; i < enc.stages.size(); ++i) {
        std::string p = "seg.u" + std::to_string(i);
        TensorMap u = detail::linear(enc.stages[i], wb.at(p + ".w"), wb.at(p + ".b"));
        detail::add_inplace(fused, detail::resize_bilinear(u, s, s));
    }
    for (double& v : fused.data)
        if (v < 0.0) v = 0.0;
    TensorMap hid = detail::linear(fused, wb.at("seg.h0.w"), wb.at("seg.h0.b"));
    for (double& v : hid.data) v = detail::gelu(v);
    TensorMap logits = detail::linear(hid, wb.at("seg.h1.w"), wb.at("seg.h1.b"));
    Raster out(s, s, 2);
    out.data = logits.data;
    return out;
}

// Box-averages a full-resolution mask onto an r x r token grid (exact integer
// factor required).
inline std::vector<double> pool_mask(const Raster& mask, int res) {
    if (mask.channels != 1) throw invalid_argument("pool_mask: mask must be single-channel");
    if (res < 1 || mask.height % res != 0 || mask.width % res != 0 ||
        mask.height != mask.width)
        throw invalid_argument("pool_mask: resolution must divide the square mask evenly");
    int f = mask.height / res;
    std::vector<double> out(static_cast<std::size_t>(res) * res, 0.0);
    double inv = 1.0 / (static_cast<double>(f) * f);
    for (int oy = 0; oy < res; ++oy)
        for (int ox = 0; ox < res; ++ox) {
            double acc = 0.0;
            for (int y = oy * f; y < (oy + 1) * f; ++y)
                for (int x = ox * f; x < (ox + 1) * f; ++x) acc += mask.at(y, x);
            out[static_cast<std::size_t>(oy) * res + ox] = acc * inv;
        }
    return out;
}

// Standalone mask-biased self-attention over a token grid: K/V are
// window-pooled, scores get +sigma * m_q m_k before the sqrt(d_head) scaling.
inline TensorMap masked_self_attention(const TensorMap& tokens,
                                       const std::vector<double>& m_tokens, double sigma,
                                       const WeightBundle& wb, const std::string& prefix,
                                       int heads, int spw_window, Trace* trace = nullptr) {
    if (static_cast<int>(m_tokens.size()) != tokens.tokens())
        throw invalid_argument("masked_self_attention: mask size must match token count");
    if (tokens.channels % heads != 0)
        throw invalid_argument("masked_self_attention: heads must divide channels");
    if (tokens.height != tokens.width)
        throw invalid_argument("masked_self_attention: token grid must be square");
    TensorMap pooled = detail::spw_pool(tokens, spw_window);
    std::vector<double> mk = detail::spw_pool_vec(m_tokens, tokens.height, spw_window);
    return detail::attention(tokens, pooled, detail::attn_params(wb, prefix), heads,
                             &m_tokens, &mk, sigma, trace, prefix);
}

// Query-grid decoder: starts from the learned coarse queries, runs
// mask-biased self-attention, cross-attention against the matching encoder
// stage (coarsest first), and an MLP per layer, doubling the grid between
// layers. Returns the coarse flow (token_res^2 x 2 displacements).
inline TensorMap decode(const EncoderOut& enc, const Raster& smooth_mask_map,
                        const WeightBundle& wb, const NetworkConfig& cfg,
                        bool use_mask_bias = true, Trace* trace = nullptr) {
    cfg.validate();
    if (static_cast<int>(enc.stages.size()) != cfg.encoder_layers)
        throw invalid_argument("decode: encoder stage count mismatch");
    if (smooth_mask_map.height != cfg.input_size || smooth_mask_map.width != cfg.input_size)
        throw invalid_argument("decode: mask must be input_size^2");
    int r = cfg.token_res() >> (cfg.decoder_layers - 1);
    const Tensor& q0 = wb.at("dec.q");
    if (q0.shape[0] != r * r) throw data_error("decode: dec.q does not match the coarse grid");
    TensorMap x(r, r, cfg.d_model);
    x.data = q0.data;
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        std::string p = "dec.l" + std::to_string(l);
        const TensorMap& e = enc.stages[cfg.decoder_layers - 1 - l];
        if (e.height != r)
            throw invalid_argument("decode: encoder stage resolution mismatch");
        std::vector<double> m = pool_mask(smooth_mask_map, r);

        TensorMap t = detail::layernorm(x, wb.at(p + ".ln1.g"), wb.at(p + ".ln1.b"));
        TensorMap pooled = detail::spw_pool(t, cfg.spw_window);
        std::vector<double> mk = detail::spw_pool_vec(m, r, cfg.spw_window);
        TensorMap a = detail::attention(
            t, pooled, detail::attn_params(wb, p + ".msa"), cfg.heads,
            use_mask_bias ? &m : nullptr, use_mask_bias ? &mk : nullptr, cfg.sigma, trace,
            p + ".msa");
        detail::add_inplace(x, a);

        t = detail::layernorm(x, wb.at(p + ".ln2.g"), wb.at(p + ".ln2.b"));
        TensorMap pooled_e = detail::spw_pool(e, cfg.spw_window);
        std::string src = "E" + std::to_string(cfg.decoder_layers - l);
        a = detail::attention(t, pooled_e, detail::attn_params(wb, p + ".ca"), cfg.heads,
                              nullptr, nullptr, 0.0, trace, p + ".ca(" + src + ")");
        detail::add_inplace(x, a);

        t = detail::layernorm(x, wb.at(p + ".ln3.g"), wb.at(p + ".ln3.b"));
        detail::add_inplace(x, detail::mlp_block(t, wb, p + ".mlp"));

        if (l + 1 < cfg.decoder_layers) {
            x = detail::resize_bilinear(x, 2 * r, 2 * r);
            r *= 2;
        }
    }
    TensorMap t = detail::layernorm(x, wb.at("dec.ln.g"), wb.at("dec.ln.b"));
    return detail::linear(t, wb.at("dec.head.w"), wb.at("dec.head.b"));
}

enum class UpsampleMode : std::uint8_t { Bilinear, Convex };

// Expands the coarse flow to a full-resolution backward field by adding the
// upsampled displacements to the identity grid. Convex mode blends the 3x3
// coarse neighborhood with learned per-subpixel softmax weights; zero coarse
// flow yields the exact identity in both modes.
inline DeformationField upsample_flow(const TensorMap& coarse, UpsampleMode mode,
                                      const WeightBundle* wb, int out_size) {
    if (coarse.channels != 2)
        throw invalid_argument("upsample_flow: coarse flow must have 2 channels");
    if (coarse.height < 2 || coarse.width != coarse.height)
        throw invalid_argument("upsample_flow: coarse grid must be square");
    DeformationField field = DeformationField::identity(out_size, out_size);
    if (mode == UpsampleMode::Bilinear) {
        TensorMap fine = detail::resize_bilinear(coarse, out_size, out_size);
        for (int i = 0; i < out_size; ++i)
            for (int j = 0; j < out_size; ++j) {
                field.at(i, j).x += fine.at(i, j, 0);
                field.at(i, j).y += fine.at(i, j, 1);
            }
        return field;
    }
    if (!wb) throw invalid_argument("upsample_flow: convex mode needs weights");
    if (out_size % coarse.height != 0)
        throw invalid_argument("upsample_flow: output size must be a multiple of the grid");
    int f = out_size / coarse.height;
    const Tensor& logits = wb->at("ups.w");
    if (logits.shape != std::vector<int>{9, f, f})
        throw data_error("upsample_flow: ups.w shape does not match the upsample factor");
    // Per-subpixel softmax over the 9 neighbor logits.
    std::vector<double> wgt(static_cast<std::size_t>(9) * f * f);
    for (int sy = 0; sy < f; ++sy)
        for (int sx = 0; sx < f; ++sx) {
            double mx = -1e300;
            for (int k = 0; k < 9; ++k)
                mx = std::max(mx, logits.data[(static_cast<std::size_t>(k) * f + sy) * f + sx]);
            double denom = 0.0;
            for (int k = 0; k < 9; ++k) {
                double e = std::exp(logits.data[(static_cast<std::size_t>(k) * f + sy) * f + sx] - mx);
                wgt[(static_cast<std::size_t>(k) * f + sy) * f + sx] = e;
                denom += e;
            }
            for (int k = 0; k < 9; ++k)
                wgt[(static_cast<std::size_t>(k) * f + sy) * f + sx] /= denom;
        }
    int r = coarse.height;
    for (int i = 0; i < out_size; ++i) {
        int cy = i / f, sy = i % f;
        for (int j = 0; j < out_size; ++j) {
            int cx = j / f, sx = j % f;
            double dx = 0.0, dy = 0.0;
            for (int k = 0; k < 9; ++k) {
                int ny = clamp_int(cy + k / 3 - 1, 0, r - 1);
                int nx = clamp_int(cx + k % 3 - 1, 0, r - 1);
                double w = wgt[(static_cast<std::size_t>(k) * f + sy) * f + sx];
                dx += w * coarse.at(ny, nx, 0);
                dy += w * coarse.at(ny, nx, 1);
            }
            field.at(i, j).x += dx;
            field.at(i, j).y += dy;
        }
    }
    return field;
}

struct ForwardOptions {
    bool use_mask_bias = true;
    UpsampleMode upsample = UpsampleMode::Convex;
    Trace* trace = nullptr;
};

struct ForwardResult {
    Raster logits;       // input_size^2 x 2
    Raster smooth;       // softened foreground probability
    DeformationField field;
};

inline ForwardResult forward(const Raster& image, const WeightBundle& wb,
                             const NetworkConfig& cfg, const ForwardOptions& opts = {}) {
    cfg.validate();
    validate_weights(wb, cfg);
    image.validate_image("forward: input image");
    TensorMap feat = extract_features(image, wb, cfg);
    EncoderOut enc = encode(feat, wb, cfg, opts.trace);
    ForwardResult out;
    out.logits = segment_foreground(enc, wb, cfg);
    out.smooth = smooth_mask(out.logits, cfg.gamma);
    TensorMap coarse = decode(enc, out.smooth, wb, cfg, opts.use_mask_bias, opts.trace);
    out.field = upsample_flow(coarse, opts.upsample,
                              opts.upsample == UpsampleMode::Convex ? &wb : nullptr,
                              cfg.input_size);
    for (const Vec2& v : out.field.coords)
        if (!std::isfinite(v.x) || !std::isfinite(v.y))
            throw numerical_error("forward: non-finite field output");
    return out;
}

}  // namespace dewarp
