#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "famarl/errors.hpp"
#include "famarl/favae/favae.hpp"
#include "famarl/rng.hpp"
#include "gradcheck.hpp"

using namespace famarl;
using namespace famarl::favae;

namespace {

ActionSeq ramp(int n, double ax, double ay) {
  ActionSeq s;
  for (int t = 0; t < n; ++t) s.push_back({ax * (t + 1) / n, ay});
  return s;
}

LadderConfig tiny_config() {
  LadderConfig c;
  c.conv1_channels = 4;
  c.conv2_channels = 6;
  c.hidden = 8;
  c.latent_dims = {2, 2, 2};
  c.epochs = 10;
  c.batch_size = 4;
  return c;
}

LatentCode random_code(Rng& rng, const std::vector<int>& dims) {
  LatentCode code;
  for (int d : dims) {
    LadderCode c;
    for (int k = 0; k < d; ++k) {
      c.mu.push_back(rng.uniform(-2, 2));
      c.logvar.push_back(rng.uniform(-2, 1));
    }
    c.z = c.mu;
    code.push_back(c);
  }
  return code;
}

}  // namespace

TEST_CASE("pad_segment indicator channels") {
  const auto p = pad_segment(ramp(3, 0.5, -0.2), 8);
  for (int t = 0; t < 8; ++t) {
    CHECK(p.on(t) == (t < 3 ? 1.0 : 0.0));
    CHECK(p.off(t) == (t < 3 ? 0.0 : 1.0));
    if (t >= 3) CHECK((p.action(t, 0) == 0.0 && p.action(t, 1) == 0.0));
  }
  const auto full = pad_segment(ramp(7, 1, 1), 7);
  for (int t = 0; t < 7; ++t) {
    CHECK(full.on(t) == 1.0);
    CHECK(full.off(t) == 0.0);
  }
  CHECK_THROWS_AS(pad_segment(ramp(9, 1, 1), 7), UsageError);
  CHECK_THROWS_AS(pad_segment({}, 7), UsageError);
}

TEST_CASE("trim inverts pad, with and without scaling") {
  for (int n : {1, 4, 11}) {
    const auto seg = ramp(n, 0.7, -0.3);
    CHECK(trim(pad_segment(seg, 11)) == seg);
    const std::array<double, 2> scale{0.5, 0.25};
    const auto back = trim(pad_segment(seg, 11, scale), scale);
    REQUIRE(back.size() == seg.size());
    for (std::size_t t = 0; t < seg.size(); ++t) {
      CHECK(back[t].ax == doctest::Approx(seg[t].ax));
      CHECK(back[t].ay == doctest::Approx(seg[t].ay));
    }
  }
}

TEST_CASE("trimmed_length rule") {
  std::vector<double> on(10, 0.9), off(10, 0.1);
  CHECK(trimmed_length(on, off) == 10);
  for (int t = 5; t < 10; ++t) off[t] = 2.0;
  CHECK(trimmed_length(on, off) == 5);
  off[0] = 1.0;
  CHECK(trimmed_length(on, off) == 1);
}

TEST_CASE("choose_length and split_to_fit") {
  CHECK(choose_length({5}) == 7);
  CHECK(choose_length({1, 1, 1}) == 3);
  std::vector<int> many;
  for (int i = 1; i <= 100; ++i) many.push_back(i);
  CHECK(choose_length(many) == 95);
  CHECK(choose_length(many, 0.5) == 51);
  CHECK_THROWS_AS(choose_length({}), UsageError);

  const auto seg = ramp(25, 1, 0);
  const auto parts = split_to_fit({seg}, 11);
  ActionSeq joined;
  // 25 -> 12 + 13 -> 6 + 6 + 6 + 7
  CHECK(parts.size() == 4);
  for (const auto& p : parts) {
    CHECK(p.size() <= 11);
    joined.insert(joined.end(), p.begin(), p.end());
  }
  CHECK(joined == seg);
}

TEST_CASE("loss closed-form examples") {
  LadderConfig cfg;
  cfg.beta = 1.0;
  const std::vector<Vector> x{{1.0, 2.0}}, y{{1.5, 2.0}};
  LatentCode zero{{{0.0, 0.0}, {0.0, 0.0}, {}}};
  auto t = favae_loss(x, y, {zero}, cfg, {0.0});
  CHECK(t.kl[0] == 0.0);
  CHECK(t.total == doctest::Approx(0.25));

  LatentCode one{{{1.0}, {0.0}, {}}};
  t = favae_loss(x, x, {one}, cfg, {0.0});
  CHECK(t.total == doctest::Approx(0.5));
  t = favae_loss(x, x, {one}, cfg, {0.5});
  CHECK(t.total == doctest::Approx(0.0));

  cfg.recon = ReconReduction::Mean;
  t = favae_loss(x, y, {zero}, cfg, {0.0});
  CHECK(t.recon == doctest::Approx(0.125));
}

TEST_CASE("loss gradient matches finite differences") {
  Rng rng(4);
  LadderConfig cfg;
  cfg.beta = 3.0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 3, n = 6;
    std::vector<Vector> x(B, Vector(n)), y(B, Vector(n));
    std::vector<LatentCode> codes;
    for (std::size_t i = 0; i < B; ++i) {
      for (auto& v : x[i]) v = rng.uniform(-1, 1);
      for (auto& v : y[i]) v = rng.uniform(-1, 1);
      codes.push_back(random_code(rng, {2, 3, 1}));
    }
    // Capacities far from the KL keep |KL - C| away from its kink.
    const std::vector<double> cap{rng.uniform(0, 5) > 2.5 ? 0.0 : 50.0, 0.0, 50.0};
    LossGrad g;
    favae_loss(x, y, codes, cfg, cap, &g);
    auto eval = [&] { return favae_loss(x, y, codes, cfg, cap).total; };
    const std::size_t i = rng.uniform_int(0, B - 1);
    const std::size_t k = rng.uniform_int(0, n - 1);
    worst = std::max(worst, testing::rel_error(g.recon[i][k], testing::fd_scalar(y[i][k], eval)));
    const std::size_t l = rng.uniform_int(0, 2);
    const std::size_t d = rng.uniform_int(0, codes[i][l].mu.size() - 1);
    worst = std::max(worst, testing::rel_error(g.mu[i][l][d], testing::fd_scalar(codes[i][l].mu[d], eval)));
    worst = std::max(worst, testing::rel_error(g.logvar[i][l][d], testing::fd_scalar(codes[i][l].logvar[d], eval)));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("model backward matches finite differences of a linear probe") {
  auto cfg = tiny_config();
  FavaeModel model(11, cfg, 3);
  Rng rng(9);
  // Zero-initialized biases would park ReLU inputs exactly on the kink.
  for (auto& [name, net] : model.networks()) net.params().for_each([&](double& v) { v = rng.uniform(-0.5, 0.5); });
  double worst = 0.0;
  int kinked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Vector x(kChannels * 11);
    for (auto& v : x) v = rng.uniform(-1, 1);
    std::vector<Vector> noise;
    for (int d : cfg.latent_dims) {
      Vector e(d);
      for (auto& v : e) v = rng.normal();
      noise.push_back(e);
    }
    FavaeModel::Cache cache;
    const auto y = model.forward(x, noise, cache);
    Vector w(y.size());
    for (auto& v : w) v = rng.uniform(-1, 1);
    std::vector<Vector> wm, wv;
    for (int d : cfg.latent_dims) {
      Vector a(d), b(d);
      for (auto& v : a) v = rng.uniform(-1, 1);
      for (auto& v : b) v = rng.uniform(-1, 1);
      wm.push_back(a);
      wv.push_back(b);
    }
    auto probe = [&] {
      FavaeModel::Cache c;
      const auto out = model.forward(x, noise, c);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
      for (int l = 0; l < kNumLadders; ++l)
        for (std::size_t k = 0; k < wm[l].size(); ++k) s += wm[l][k] * c.code[l].mu[k] + wv[l][k] * c.code[l].logvar[k];
      return s;
    };
    std::map<std::string, nn::ParamSet> grads;
    for (const auto& [name, net] : model.networks()) grads[name] = net.params().zeros_like();
    model.backward(cache, w, wm, wv, grads);

    auto it = model.networks().begin();
    std::advance(it, rng.uniform_int(0, model.networks().size() - 1));
    auto& tensors = it->second.params().tensors;
    const std::size_t ti = rng.uniform_int(0, tensors.size() - 1);
    const std::size_t vi = rng.uniform_int(0, tensors[ti].values.size() - 1);
    const double numeric = testing::fd_scalar(tensors[ti].values[vi], probe);
    // A ReLU kink inside the stencil shows up as step-size dependence.
    if (testing::rel_error(numeric, testing::fd_scalar(tensors[ti].values[vi], probe, 1e-6)) > 1e-4) {
      ++kinked;
      continue;
    }
    INFO(it->first << " " << tensors[ti].name);
    worst = std::max(worst, testing::rel_error(grads.at(it->first).tensors[ti].values[vi], numeric));
  }
  CHECK(worst < 1e-3);
  CHECK(kinked < 10);
}

TEST_CASE("capacity schedule is exactly linear then constant") {
  LadderConfig c;
  c.epochs = 100;
  c.c_last = {4.0, 2.0, 1.0};
  CHECK(c.anneal() == 80);
  CHECK(c.scheduled_c(0, 40) == 2.0);
  CHECK(c.scheduled_c(1, 0) == 0.0);
  for (int e = 0; e < 100; ++e)
    for (int l = 0; l < 3; ++l) CHECK(c.scheduled_c(l, e) == std::min(e / 80.0, 1.0) * c.c_last[l]);
  c.anneal_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training: deterministic, logged schedule, checkpoint round trip") {
  std::vector<ActionSeq> segs;
  Rng rng(1);
  for (int i = 0; i < 12; ++i) segs.push_back(ramp(static_cast<int>(rng.uniform_int(3, 11)), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  auto cfg = tiny_config();
  cfg.c_last = {1.0, 0.5, 0.25};
  TrainOptions opts;
  opts.seed = 5;
  const auto a = train_favae(segs, 11, cfg, opts);
  const auto b = train_favae(segs, 11, cfg, opts);
  for (const auto& [name, net] : a.networks()) CHECK(net.params() == b.networks().at(name).params());
  REQUIRE(a.log.size() == 10);
  for (const auto& e : a.log)
    for (int l = 0; l < 3; ++l) CHECK(e.capacity[l] == cfg.scheduled_c(l, e.epoch));

  const auto dir = std::filesystem::temp_directory_path() / "famarl_test_favae";
  std::filesystem::create_directories(dir);
  a.save(dir / "m.ck");
  const auto back = FavaeModel::load(dir / "m.ck");
  const auto p = pad_segment(segs[0], 11, a.action_scale());
  CHECK(back.reconstruct(p) == a.reconstruct(p));
  CHECK(back.L() == 11);
  write_training_log(a.log, dir / "log.csv");
  std::ifstream f(dir / "log.csv");
  std::string header;
  std::getline(f, header);
  CHECK(header == "epoch,total,recon,kl0,kl1,kl2,c0,c1,c2");
  const auto log = read_training_log(dir / "log.csv");
  REQUIRE(log.size() == a.log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].epoch == a.log[i].epoch);
    CHECK(log[i].total == a.log[i].total);
    CHECK(log[i].kl == a.log[i].kl);
    CHECK(log[i].capacity == a.log[i].capacity);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("calibration on a degenerate corpus collapses to the prior") {
  std::vector<ActionSeq> segs(16, ActionSeq(5, {0.0, 0.0}));
  auto cfg = tiny_config();
  cfg.epochs = 1000;
  const auto c = calibrate_capacity(segs, 7, cfg, 2);
  REQUIRE(c.size() == 3);
  for (double v : c) {
    CHECK(v >= 0.0);
    CHECK(v < 0.05);
  }
  CHECK(calibrate_capacity(segs, 7, cfg, 2) == c);
}

TEST_CASE("decode_and_trim bounds and traversal identity") {
  FavaeModel model(15, tiny_config(), 7);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Vector z(model.latent_size());
    for (auto& v : z) v = rng.uniform(-4, 4);
    const auto seq = model.decode_and_trim(z);
    CHECK(!seq.empty());
    CHECK(seq.size() <= 15);
    for (const auto& a : seq) CHECK((std::abs(a.ax) <= 1.0 && std::abs(a.ay) <= 1.0));
  }
  const auto base = ramp(9, 0.5, 0.5);
  const auto code = model.encode(pad_segment(base, 15).x);
  const auto tr = latent_traversal(model, base, 2, 1, {code[2].mu[1]});
  CHECK(tr.sequences.at(0) == model.reconstruct(pad_segment(base, 15)));
  CHECK_THROWS_AS(latent_traversal(model, base, 2, 2, {0.0}), UsageError);
  CHECK_THROWS_AS(latent_traversal(model, base, 3, 0, {0.0}), UsageError);
  CHECK_THROWS_AS(model.decode_and_trim(Vector(5, 0.0)), UsageError);
}

TEST_CASE("invalid L is rejected") {
  CHECK_THROWS_AS(FavaeModel(12, tiny_config(), 1), ConfigError);
  CHECK_THROWS_AS(FavaeModel(1, tiny_config(), 1), ConfigError);
}

TEST_CASE("post-anneal smoothed loss trend") {
  std::vector<EpochLog> log;
  for (double v : {9.0, 8.0, 5.0, 4.0, 4.4, 3.0}) log.push_back({static_cast<int>(log.size()), v, 0.0, {}, {}});
  const auto t = post_anneal_trend(log, 2, 1);
  CHECK(t.points == 4);
  CHECK(t.max_relative_rise == doctest::Approx(0.1));
  CHECK(t.end_not_above_start);
  CHECK(post_anneal_trend(log, 0, 2).points == 5);

  std::vector<ActionSeq> segs;
  Rng rng(4);
  for (int i = 0; i < 16; ++i) segs.push_back(ramp(static_cast<int>(rng.uniform_int(3, 11)), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  auto cfg = tiny_config();
  cfg.epochs = 150;
  cfg.c_last = {1.0, 0.5, 0.25};
  const auto m = train_favae(segs, 11, cfg, TrainOptions{3, std::nullopt});
  const auto trend = post_anneal_trend(m.log, cfg.anneal());
  CHECK(trend.points == 21);
  CHECK(trend.max_relative_rise <= 0.01);
  CHECK(trend.end_not_above_start);
}

TEST_CASE("traversal effect statistics") {
  FavaeModel model(15, tiny_config(), 8);
  const auto base = ramp(9, 0.5, -0.5);
  const auto code = model.encode(pad_segment(base, 15).x);
  const auto same = traversal_effect(model, {base}, 1, 0, {code[1].mu[0]}, 0.625);
  const auto end = env::integrate_free(model.decode_and_trim(code), 0.625).back();
  CHECK(same.relative_endpoint_shift == 0.0);
  CHECK(same.mean_final_y.at(0) == end.y);
  CHECK(same.kl >= 0.0);
  const auto e = traversal_effect(model, {base, ramp(5, -0.3, 0.2)}, 0, 1, {-3, -1, 1, 3}, 0.625);
  CHECK(e.mean_final_y.size() == 4);
  CHECK(e.relative_endpoint_shift >= 0.0);
  CHECK_THROWS_AS(traversal_effect(model, {}, 0, 0, {1.0}, 0.625), UsageError);

  TraversalEffect t;
  t.mean_final_y = {-1, 0, 2, 5};
  CHECK(t.strictly_monotone());
  t.mean_final_y = {3, 1, 0, -4};
  CHECK(t.strictly_monotone());
  t.mean_final_y = {0, 1, 1, 2};
  CHECK_FALSE(t.strictly_monotone());
  t.mean_final_y = {1};
  CHECK_FALSE(t.strictly_monotone());
}
