#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "nmt/gradcheck.hpp"
#include "nmt/model.hpp"

using namespace nmt;

namespace {

// Plain-loop reference math, independent of the tensor library.
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Vec matvec(const Vec& x, const Mat& w) {  // row vector times [in, out] matrix
  Vec out(w[0].size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[i] * w[i][j];
  }
  return out;
}

Vec ref_softmax(Vec s) {
  double mx = s[0];
  for (double v : s) mx = std::max(mx, v);
  double sum = 0.0;
  for (auto& v : s) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : s) v /= sum;
  return s;
}

Vec ref_layer_norm(const Vec& x, const Vec& g, const Vec& b, double eps) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= static_cast<double>(x.size());
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = g[i] * ((x[i] - m) / std::sqrt(var + eps)) + b[i];
  }
  return out;
}

// Single-head attention for one sequence; block[i][j] masks key j for query i.
Mat ref_attention(const Mat& q_in, const Mat& kv_in, const Mat& wq, const Mat& wk, const Mat& wv,
                  const Mat& wo, const std::vector<std::vector<bool>>& block) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq[0].size()));
  Mat out;
  for (std::size_t i = 0; i < q_in.size(); ++i) {
    Vec q = matvec(q_in[i], wq);
    Vec scores(kv_in.size());
    for (std::size_t j = 0; j < kv_in.size(); ++j) {
      Vec k = matvec(kv_in[j], wk);
      double s = 0.0;
      for (std::size_t t = 0; t < q.size(); ++t) s += q[t] * k[t];
      scores[j] = s * scale + (block[i][j] ? -1e9 : 0.0);
    }
    Vec probs = ref_softmax(scores);
    Vec ctx(q.size(), 0.0);
    for (std::size_t j = 0; j < kv_in.size(); ++j) {
      Vec v = matvec(kv_in[j], wv);
      for (std::size_t t = 0; t < v.size(); ++t) ctx[t] += probs[j] * v[t];
    }
    out.push_back(matvec(ctx, wo));
  }
  return out;
}

Mat ref_ffn(const Mat& x, const Mat& w1, const Vec& b1, const Mat& w2, const Vec& b2) {
  Mat out;
  for (const auto& row : x) {
    Vec h = matvec(row, w1);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(0.0, h[i] + b1[i]);
    Vec o = matvec(h, w2);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += b2[i];
    out.push_back(o);
  }
  return out;
}

Mat add_rows(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
  }
  return out;
}

Mat ln_rows(const Mat& x, const Vec& g, const Vec& b) {
  Mat out;
  for (const auto& row : x) out.push_back(ref_layer_norm(row, g, b, kLayerNormEps));
  return out;
}

Mat tensor_matrix(const Tensor& t) {  // rank-2 tensor to row-major Mat
  Mat m(static_cast<std::size_t>(t.dim(0)), Vec(static_cast<std::size_t>(t.dim(1))));
  for (std::int64_t i = 0; i < t.dim(0); ++i) {
    for (std::int64_t j = 0; j < t.dim(1); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t(i, j);
  }
  return m;
}

Vec tensor_vec(const Tensor& t) { return t.data(); }

ModelConfig tiny_config(int layers = 1, std::int64_t d = 2, std::int64_t f = 4) {
  ModelConfig cfg;
  cfg.d_model = d;
  cfg.d_ffn = f;
  cfg.n_heads = 1;
  cfg.n_layers = layers;
  cfg.src_vocab = 6;
  cfg.tgt_vocab = 6;
  cfg.dropout = 0.0;
  cfg.use_positions = false;
  return cfg;
}

}  // namespace

TEST_CASE("config validation and variant names") {
  ModelConfig cfg = tiny_config();
  cfg.validate();
  ModelConfig bad = cfg;
  bad.d_model = 3;
  bad.n_heads = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.src_vocab = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.separate_future_embedding = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  for (Variant v : {Variant::Baseline, Variant::ModelOne, Variant::ModelTwo}) {
    CHECK(variant_from_name(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(variant_from_name("transformer"), ConfigError);
}

TEST_CASE("parameter layout") {
  ModelConfig cfg = tiny_config(2, 4, 8);
  cfg.variant = Variant::ModelTwo;
  ModelParams p = ModelParams::init(cfg, 7);

  SUBCASE("visit enumerates every tensor exactly once, deterministically") {
    std::vector<std::string> names;
    p.visit([&](const std::string& n, Tensor&) { names.push_back(n); });
    std::vector<std::string> again;
    p.visit([&](const std::string& n, Tensor&) { again.push_back(n); });
    CHECK(names == again);
    CHECK(names.front() == "src_embed");
    std::set<std::string> unique(names.begin(), names.end());
    CHECK(unique.size() == names.size());
    CHECK(unique.count("future.gate.w") == 1);
    CHECK(unique.count("future.cell.br") == 0);  // bias off by default
  }

  SUBCASE("shared parameters initialize identically across variants") {
    ModelConfig base_cfg = cfg;
    base_cfg.variant = Variant::Baseline;
    ModelParams base = ModelParams::init(base_cfg, 7);
    std::map<std::string, std::vector<double>> by_name;
    base.visit([&](const std::string& n, Tensor& t) { by_name[n] = t.data(); });
    int shared = 0;
    p.visit([&](const std::string& n, Tensor& t) {
      auto it = by_name.find(n);
      if (it != by_name.end()) {
        CHECK(it->second == t.data());
        ++shared;
      }
    });
    CHECK(shared == static_cast<int>(by_name.size()));
  }

  SUBCASE("future head differs from the translation head") {
    CHECK(p.fh_w.data() != p.w_w.data());
    CHECK(p.fh_o.data() != p.w_o.data());
  }

  SUBCASE("gate only exists for the fusion variant") {
    ModelConfig m1 = cfg;
    m1.variant = Variant::ModelOne;
    ModelParams q = ModelParams::init(m1, 7);
    CHECK(!q.gate_w.defined());
    CHECK(q.f_wr.defined());
    CHECK(p.gate_w.shape() == Shape{8, 1});
  }
}

TEST_CASE("causal mask shape and counts") {
  auto one = causal_mask(1);
  CHECK(one == std::vector<std::uint8_t>{0});
  auto two = causal_mask(2);
  CHECK(two == std::vector<std::uint8_t>{0, 1, 0, 0});
  auto five = causal_mask(5);
  int blocked = 0;
  for (auto b : five) blocked += b;
  CHECK(blocked == 10);
}

TEST_CASE("sinusoidal positions") {
  Tensor pos = sinusoidal_positions(4, 6);
  CHECK(pos.shape() == Shape{4, 6});
  CHECK(pos(0, 0) == 0.0);  // sin(0)
  CHECK(pos(0, 1) == 1.0);  // cos(0)
  CHECK(pos(2, 0) == doctest::Approx(std::sin(2.0)).epsilon(1e-12));
  CHECK(pos(1, 2) == doctest::Approx(std::sin(1.0 * std::pow(10000.0, -2.0 / 6.0))).epsilon(1e-12));
}

TEST_CASE("encoder forward") {
  ModelConfig cfg = tiny_config();
  ModelParams p = ModelParams::init(cfg, 3);
  Rng rng(1);

  SUBCASE("output shape") {
    std::vector<int> ids = {4, 5, 4, 5, 5, 4};
    std::vector<std::uint8_t> pad(6, 0);
    Tensor h = encode(p, ids, pad, 2, 3, false, rng);
    CHECK(h.shape() == Shape{2, 3, 2});
  }

  SUBCASE("matches the plain-loop reference") {
    std::vector<int> ids = {4, 5};
    std::vector<std::uint8_t> pad = {0, 0};
    Tensor h = encode(p, ids, pad, 1, 2, false, rng);

    const double root_d = std::sqrt(2.0);
    Mat x;
    for (int id : ids) {
      x.push_back({p.src_embed(id, 0) * root_d, p.src_embed(id, 1) * root_d});
    }
    std::vector<std::vector<bool>> open(2, std::vector<bool>(2, false));
    const auto& L = p.enc[0];
    Mat att = ref_attention(x, x, tensor_matrix(L.wq), tensor_matrix(L.wk), tensor_matrix(L.wv),
                            tensor_matrix(L.wo), open);
    Mat c = ln_rows(add_rows(att, x), tensor_vec(L.ln1_g), tensor_vec(L.ln1_b));
    Mat f = ref_ffn(c, tensor_matrix(L.ffn_w1), tensor_vec(L.ffn_b1), tensor_matrix(L.ffn_w2),
                    tensor_vec(L.ffn_b2));
    Mat expect = ln_rows(add_rows(f, c), tensor_vec(L.ln2_g), tensor_vec(L.ln2_b));
    for (std::int64_t i = 0; i < 2; ++i) {
      for (std::int64_t t = 0; t < 2; ++t) {
        CHECK(h(0, i, t) == doctest::Approx(expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)])
                               .epsilon(1e-10));
      }
    }
  }

  SUBCASE("permutation equivariance without positions") {
    std::vector<int> ids = {4, 5, 5, 4};
    std::vector<std::uint8_t> pad(4, 0);
    Tensor h1 = encode(p, ids, pad, 1, 4, false, rng);
    std::vector<int> swapped = {4, 5, 4, 5};  // swap positions 2 and 3
    Tensor h2 = encode(p, swapped, pad, 1, 4, false, rng);
    for (std::int64_t t = 0; t < 2; ++t) {
      CHECK(h1(0, 2, t) == doctest::Approx(h2(0, 3, t)).epsilon(1e-12));
      CHECK(h1(0, 3, t) == doctest::Approx(h2(0, 2, t)).epsilon(1e-12));
      CHECK(h1(0, 0, t) == doctest::Approx(h2(0, 0, t)).epsilon(1e-12));
    }
  }

  SUBCASE("padded positions are inert") {
    std::vector<int> ids = {4, 5, 4, 5, 4, 5};
    std::vector<std::uint8_t> pad = {0, 0, 0, 0, 0, 1};  // batch row 1 has one pad
    Tensor h1 = encode(p, ids, pad, 2, 3, false, rng);
    std::vector<int> altered = ids;
    altered[5] = 2;  // change the padded token id
    Tensor h2 = encode(p, altered, pad, 2, 3, false, rng);
    for (std::int64_t b = 0; b < 2; ++b) {
      for (std::int64_t j = 0; j < 3; ++j) {
        if (pad[static_cast<std::size_t>(b * 3 + j)]) continue;
        for (std::int64_t t = 0; t < 2; ++t) CHECK(h1(b, j, t) == h2(b, j, t));
      }
    }
  }

  SUBCASE("attention rows sum to one") {
    ModelConfig cfg2 = tiny_config(2, 4, 8);
    cfg2.n_heads = 2;
    ModelParams p2 = ModelParams::init(cfg2, 5);
    std::vector<int> ids = {4, 5, 4, 5, 4, 5};
    std::vector<std::uint8_t> pad = {0, 0, 0, 0, 0, 1};
    AttnTrace trace;
    encode(p2, ids, pad, 2, 3, false, rng, &trace);
    REQUIRE(trace.enc_self.size() == 2);
    for (const auto& probs : trace.enc_self) {
      for (std::int64_t r = 0; r < probs.dim(0) * probs.dim(1); ++r) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < probs.dim(2); ++j) {
          sum += probs.data()[static_cast<std::size_t>(r * probs.dim(2) + j)];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }

  SUBCASE("overlong input rejected") {
    ModelConfig cfg3 = tiny_config();
    cfg3.max_len = 4;
    ModelParams p3 = ModelParams::init(cfg3, 3);
    std::vector<int> ids(5, 4);
    std::vector<std::uint8_t> pad(5, 0);
    CHECK_THROWS_AS(encode(p3, ids, pad, 1, 5, false, rng), InputError);
  }
}

TEST_CASE("decoder forward") {
  ModelConfig cfg = tiny_config();
  ModelParams p = ModelParams::init(cfg, 4);
  Rng rng(2);
  Tensor enc_out = Tensor::from_data({1, 2, 2}, {0.3, -0.7, 1.1, 0.4});
  std::vector<std::uint8_t> src_pad = {0, 0};

  SUBCASE("shape and manual reference") {
    std::vector<int> tgt_in = {Vocabulary::kBos, 4};
    auto causal = causal_mask(2);
    Tensor h = decode(p, tgt_in, causal, enc_out, src_pad, 1, 2, false, rng);
    CHECK(h.shape() == Shape{1, 2, 2});

    const double root_d = std::sqrt(2.0);
    Mat x;
    for (int id : tgt_in) {
      x.push_back({p.tgt_embed(id, 0) * root_d, p.tgt_embed(id, 1) * root_d});
    }
    Mat enc_rows = {{0.3, -0.7}, {1.1, 0.4}};
    std::vector<std::vector<bool>> causal_block = {{false, true}, {false, false}};
    std::vector<std::vector<bool>> open(2, std::vector<bool>(2, false));
    const auto& L = p.dec[0];
    Mat att = ref_attention(x, x, tensor_matrix(L.wq), tensor_matrix(L.wk), tensor_matrix(L.wv),
                            tensor_matrix(L.wo), causal_block);
    Mat s1 = ln_rows(add_rows(att, x), tensor_vec(L.ln1_g), tensor_vec(L.ln1_b));
    Mat cross = ref_attention(s1, enc_rows, tensor_matrix(L.cq), tensor_matrix(L.ck),
                              tensor_matrix(L.cv), tensor_matrix(L.co), open);
    Mat s2 = ln_rows(add_rows(cross, s1), tensor_vec(L.ln2_g), tensor_vec(L.ln2_b));
    Mat f = ref_ffn(s2, tensor_matrix(L.ffn_w1), tensor_vec(L.ffn_b1), tensor_matrix(L.ffn_w2),
                    tensor_vec(L.ffn_b2));
    Mat expect = ln_rows(add_rows(f, s2), tensor_vec(L.ln3_g), tensor_vec(L.ln3_b));
    for (std::int64_t i = 0; i < 2; ++i) {
      for (std::int64_t t = 0; t < 2; ++t) {
        CHECK(h(0, i, t) == doctest::Approx(expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)])
                               .epsilon(1e-10));
      }
    }
  }

  SUBCASE("future positions cannot influence earlier outputs") {
    std::vector<int> a = {Vocabulary::kBos, 4, 5};
    std::vector<int> b = {Vocabulary::kBos, 4, 2};
    auto causal = causal_mask(3);
    Tensor ha = decode(p, a, causal, enc_out, src_pad, 1, 3, false, rng);
    Tensor hb = decode(p, b, causal, enc_out, src_pad, 1, 3, false, rng);
    for (std::int64_t i = 0; i < 2; ++i) {
      for (std::int64_t t = 0; t < 2; ++t) CHECK(ha(0, i, t) == hb(0, i, t));
    }
    CHECK(ha(0, 2, 0) != hb(0, 2, 0));
  }

  SUBCASE("padded encoder rows cannot influence the decoder") {
    Tensor enc_pad = Tensor::from_data({1, 2, 2}, {0.3, -0.7, 99.0, 99.0});
    Tensor enc_pad2 = Tensor::from_data({1, 2, 2}, {0.3, -0.7, -5.0, 17.0});
    std::vector<std::uint8_t> mask = {0, 1};
    std::vector<int> tgt_in = {Vocabulary::kBos, 4};
    auto causal = causal_mask(2);
    Tensor h1 = decode(p, tgt_in, causal, enc_pad, mask, 1, 2, false, rng);
    Tensor h2 = decode(p, tgt_in, causal, enc_pad2, mask, 1, 2, false, rng);
    for (std::int64_t i = 0; i < h1.numel(); ++i) CHECK(h1.data()[i] == h2.data()[i]);
  }
}

TEST_CASE("output head") {
  ModelConfig cfg = tiny_config();
  cfg.tgt_vocab = 6;
  ModelParams p = ModelParams::init(cfg, 9);

  SUBCASE("zero hidden state gives zero logits, hence a uniform distribution") {
    Tensor h = Tensor::zeros({1, 2, 2});
    Tensor logits = output_logits(p, h);
    CHECK(logits.shape() == Shape{1, 2, 6});
    for (double v : logits.data()) CHECK(v == 0.0);
  }

  SUBCASE("softmax over logits is a distribution") {
    Tensor h = Tensor::from_data({2, 2}, {0.5, -1.0, 2.0, 0.1});
    Tensor dist = softmax(output_logits(p, h), -1);
    for (std::int64_t r = 0; r < 2; ++r) {
      double sum = 0.0;
      for (std::int64_t v = 0; v < 6; ++v) sum += dist(r, v);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  SUBCASE("direct formula on a hand-set head") {
    std::copy_n(std::vector<double>{1.0, 2.0, -1.0, 0.5}.begin(), 4, p.w_w.data().begin());
    std::vector<double> wo = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, -0.1, -0.2, -0.3, -0.4, -0.5, -0.6};
    std::copy(wo.begin(), wo.end(), p.w_o.data().begin());
    Tensor h = Tensor::from_data({1, 2}, {1.0, 0.0});
    Tensor logits = output_logits(p, h);
    const double t0 = std::tanh(1.0), t1 = std::tanh(2.0);
    for (std::int64_t v = 0; v < 6; ++v) {
      const double expect = t0 * wo[static_cast<std::size_t>(v)] + t1 * wo[static_cast<std::size_t>(6 + v)];
      CHECK(logits(0, v) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  SUBCASE("tied head reuses the target embedding") {
    ModelConfig tied = cfg;
    tied.tie_output = true;
    ModelParams q = ModelParams::init(tied, 9);
    CHECK(!q.w_o.defined());
    Tensor h = Tensor::from_data({1, 2}, {0.4, -0.2});
    Tensor logits = output_logits(q, h);
    Tensor t = tanh(matmul(h, q.w_w));
    for (std::int64_t v = 0; v < 6; ++v) {
      const double expect = t(0, 0) * q.tgt_embed(v, 0) + t(0, 1) * q.tgt_embed(v, 1);
      CHECK(logits(0, v) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("full transformer gradients match finite differences") {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ffn = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.src_vocab = 10;
  cfg.tgt_vocab = 10;
  cfg.dropout = 0.0;
  ModelParams p = ModelParams::init(cfg, 31);

  std::vector<int> src = {4, 5, 6, 7, 8, 9};
  std::vector<std::uint8_t> src_pad = {0, 0, 0, 0, 0, 1};
  std::vector<int> tgt_in = {1, 4, 5, 1, 6, 7};
  std::vector<int> targets = {4, 5, 2, 6, 7, 2};
  std::vector<std::uint8_t> tgt_mask = {1, 1, 1, 1, 1, 1};
  auto causal = causal_mask(3);

  std::vector<std::pair<std::string, Tensor>> params;
  p.visit([&](const std::string& n, Tensor& t) { params.emplace_back(n, t); });

  auto make_loss = [&]() {
    Rng rng(0);
    Tensor enc = encode(p, src, src_pad, 2, 3, false, rng);
    Tensor dec = decode(p, tgt_in, causal, enc, src_pad, 2, 3, false, rng);
    Tensor lp = log_softmax(output_logits(p, dec), -1);
    return smoothed_nll(lp, targets, tgt_mask, 0.0, Vocabulary::kPad);
  };
  auto report = finite_diff_check(params, make_loss, 1e-5, 1e-3, 7);
  INFO("worst ", report.worst_param, "[", report.worst_index, "] analytic ",
       report.worst_analytic, " numeric ", report.worst_numeric, " over ", report.checked);
  CHECK(report.max_rel_err < 1e-4);
}
