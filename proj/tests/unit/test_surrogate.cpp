#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

#include "lfm/core/error.hpp"
#include "lfm/core/gmm.hpp"
#include "lfm/surrogate/checkpoint.hpp"
#include "lfm/surrogate/model.hpp"
#include "lfm/surrogate/score.hpp"
#include "lfm/surrogate/train.hpp"

using namespace lfm;

namespace {

SurrogateArch small_arch(std::size_t dim = 3, std::size_t embed = 4) {
  SurrogateArch a;
  a.dim = dim;
  a.time_embedding = embed;
  a.hidden = {5, 4};
  return a;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.reshaped()) v = rng.normal();
  return m;
}

Vector random_vector(Eigen::Index n, Rng& rng) {
  Vector v(n);
  for (auto& e : v) e = rng.normal();
  return v;
}

double assignment_cost(const Matrix& cost, const std::vector<std::size_t>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p[i]));
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lfm_test_surrogate_" + name);
}

}  // namespace

TEST_CASE("architecture") {
  CHECK(SurrogateArch::default_width(2) == 256);
  CHECK(SurrogateArch::default_width(2048) == 256);
  CHECK(SurrogateArch::default_width(4096) == 512);
  CHECK(SurrogateArch::default_width(3000) == 384);
  const SurrogateArch a = small_arch();
  CHECK(a.input_width() == 7);
  CHECK(a.widths() == std::vector<std::size_t>{7, 5, 4, 3});
  SurrogateArch raw = small_arch(2, 0);
  CHECK(raw.input_width() == 3);
  SurrogateArch odd = small_arch(2, 3);
  CHECK_THROWS_AS(odd.validate(), ConfigError);
  SurrogateArch zero = small_arch();
  zero.hidden = {4, 0};
  CHECK_THROWS_AS(zero.validate(), ConfigError);

  Rng rng(1);
  const SurrogateModel m(a, rng);
  CHECK(m.param_count() == 7 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3);
  CHECK(m.layer_offset(0) == 0);
  CHECK(m.layer_offset(1) == 40);
  CHECK(m.layer_offset(2) == 64);
  CHECK(m.ema() == m.params());
}

TEST_CASE("time embedding") {
  Rng rng(2);
  const SurrogateModel m(small_arch(2, 4), rng);
  Matrix x(1, 2);
  x << 0.3, -0.2;
  Vector t(1);
  t << 0.5;
  const Matrix in = m.input(x, t);
  REQUIRE(in.cols() == 6);
  CHECK(in(0, 0) == 0.3);
  CHECK(in(0, 1) == -0.2);
  // Sine half then cosine half of the same frequencies.
  for (int j = 0; j < 2; ++j) CHECK(in(0, 2 + j) * in(0, 2 + j) + in(0, 4 + j) * in(0, 4 + j) == doctest::Approx(1.0));
  const SurrogateModel r(small_arch(2, 0), rng);
  CHECK(r.input(x, t)(0, 2) == 0.5);
}

TEST_CASE("loss gradient matches central differences") {
  Rng rng(3);
  for (std::size_t embed : {0u, 4u}) {
    const SurrogateModel m(small_arch(3, embed), rng);
    Vector theta = m.params();
    for (int probe = 0; probe < 10; ++probe) {
      const Vector x0 = random_vector(3, rng), x1 = random_vector(3, rng);
      const double t = rng.uniform();
      const LossGrad lg = fm_loss(m, theta, x0, x1, t);
      double err = 0.0, scale = 0.0;
      for (Eigen::Index p = 0; p < theta.size(); ++p) {
        const double keep = theta(p), h = 1e-6;
        theta(p) = keep + h;
        const double up = fm_loss(m, theta, x0, x1, t).loss;
        theta(p) = keep - h;
        const double down = fm_loss(m, theta, x0, x1, t).loss;
        theta(p) = keep;
        const double fd = (up - down) / (2 * h);
        err += (fd - lg.grad(p)) * (fd - lg.grad(p));
        scale += fd * fd;
      }
      CHECK(std::sqrt(err / scale) < 1e-6);
    }
  }
}

TEST_CASE("batch loss is the mean of per-sample losses") {
  Rng rng(4);
  const SurrogateModel m(small_arch(), rng);
  const Matrix x0 = random_matrix(6, 3, rng), x1 = random_matrix(6, 3, rng);
  Vector ts(6);
  for (auto& t : ts) t = rng.uniform();
  const LossGrad batch = fm_loss_batch(m, m.params(), x0, x1, ts);
  double loss = 0.0;
  Vector grad = Vector::Zero(batch.grad.size());
  for (Eigen::Index i = 0; i < 6; ++i) {
    const LossGrad one = fm_loss(m, m.params(), x0.row(i).transpose(), x1.row(i).transpose(), ts(i));
    loss += one.loss / 6.0;
    grad += one.grad / 6.0;
  }
  CHECK(batch.loss == doctest::Approx(loss).epsilon(1e-12));
  CHECK((batch.grad - grad).norm() < 1e-12 * std::max(1.0, grad.norm()));
  Vector bad = ts;
  bad(0) = 1.0;
  CHECK_THROWS_AS(fm_loss_batch(m, m.params(), x0, x1, bad), ValidationError);
}

TEST_CASE("input gradient, jvp and vjp agree with differences") {
  Rng rng(5);
  const auto model = std::make_shared<SurrogateModel>(small_arch(), rng);
  const Vector& theta = model->params();
  const Matrix xs = random_matrix(4, 3, rng);
  Vector ts(4);
  for (auto& t : ts) t = rng.uniform();
  const Matrix dirs = random_matrix(4, 3, rng);
  const Matrix jv = model->jvp(theta, xs, ts, dirs);
  const double h = 1e-6;
  const Matrix fd = (model->evaluate(theta, xs + h * dirs, ts) - model->evaluate(theta, xs - h * dirs, ts)) / (2 * h);
  CHECK((jv - fd).norm() < 1e-7 * std::max(1.0, fd.norm()));

  // d/dx of sum(w . output) through backward equals J^T w per row.
  const Matrix w = random_matrix(4, 3, rng);
  const ForwardCache cache = model->forward(theta, xs, ts);
  const Matrix dx = model->backward(theta, cache, w, nullptr);
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(dx.row(r).dot(dirs.row(r)) == doctest::Approx(w.row(r).dot(jv.row(r))).epsilon(1e-10));

  const SurrogateField field(model, false);
  const Vector x = xs.row(0).transpose(), u = dirs.row(0).transpose(), c = w.row(0).transpose();
  CHECK(c.dot(field.jvp(x, ts(0), u)) == doctest::Approx(u.dot(field.vjp(x, ts(0), c))).epsilon(1e-10));
  CHECK((field.evaluate_batch(xs.topRows(1), ts(0)).row(0).transpose() - field.evaluate(x, ts(0))).norm() < 1e-14);
}

TEST_CASE("per-sample gradient norms") {
  Rng rng(6);
  const SurrogateModel m(small_arch(), rng);
  const Vector& theta = m.params();
  const Matrix xs = random_matrix(5, 3, rng), d_out = random_matrix(5, 3, rng);
  Vector ts(5);
  for (auto& t : ts) t = rng.uniform();
  const ForwardCache cache = m.forward(theta, xs, ts);
  const Vector full = m.per_sample_grad_sq(theta, cache, d_out);
  const Vector last = m.per_sample_grad_sq(theta, cache, d_out, true);
  const std::size_t out_offset = m.layer_offset(m.layer_count() - 1);
  for (Eigen::Index r = 0; r < 5; ++r) {
    const ForwardCache one = m.forward(theta, xs.row(r), ts.segment(r, 1));
    Vector g = Vector::Zero(static_cast<Eigen::Index>(m.param_count()));
    m.backward(theta, one, d_out.row(r), &g);
    CHECK(full(r) == doctest::Approx(g.squaredNorm()).epsilon(1e-10));
    CHECK(last(r) == doctest::Approx(g.tail(g.size() - static_cast<Eigen::Index>(out_offset)).squaredNorm()).epsilon(1e-10));
  }
}

TEST_CASE("ema and momentum updates") {
  Rng rng(7);
  SurrogateModel m(small_arch(), rng, 0.9);
  const Vector before = m.ema();
  m.params().array() += 1.0;
  m.update_ema();
  CHECK((m.ema() - (0.9 * before + 0.1 * m.params())).norm() < 1e-14);
  CHECK_THROWS_AS(m.set_ema_decay(1.5), ConfigError);

  MomentumSgd opt(0.1, 0.5, 2);
  Vector theta = Vector::Zero(2), g(2);
  g << 1.0, -2.0;
  opt.step(theta, g);  // v = g
  opt.step(theta, g);  // v = 1.5 g
  CHECK((theta - (-0.1 * 2.5 * g)).norm() < 1e-15);
}

TEST_CASE("hungarian matches brute force on small matrices") {
  Rng rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng.uniform_index(6));
    Matrix cost = random_matrix(n, n, rng).cwiseAbs();
    if (trial % 5 == 0) cost = cost.array().round();  // plenty of ties
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do best = std::min(best, assignment_cost(cost, perm));
    while (std::next_permutation(perm.begin(), perm.end()));
    const auto h = hungarian(cost);
    std::vector<std::size_t> sorted = h;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> ident(static_cast<std::size_t>(n));
    std::iota(ident.begin(), ident.end(), std::size_t{0});
    CHECK(sorted == ident);
    CHECK(assignment_cost(cost, h) == doctest::Approx(best).epsilon(1e-12));

    const auto g = greedy_assignment(cost);
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> gs = g;
    std::sort(gs.begin(), gs.end());
    CHECK(gs == ident);
    CHECK(assignment_cost(cost, g) >= best - 1e-12);
  }
}

TEST_CASE("minibatch OT pairing lowers the transport cost") {
  Rng rng(9);
  const Matrix x0 = random_matrix(32, 4, rng), x1 = random_matrix(32, 4, rng);
  const Matrix paired = ot_pair(x0, x1);
  CHECK((paired - x0).squaredNorm() <= (x1 - x0).squaredNorm());
  // Same multiset of rows.
  std::vector<double> a, b;
  for (Eigen::Index i = 0; i < 32; ++i) {
    a.push_back(x1.row(i).sum());
    b.push_back(paired.row(i).sum());
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("time sampling") {
  TrainConfig cfg;
  cfg.t_lo = 0.0;
  cfg.t_hi = 0.7;
  Rng rng(10);
  const Vector c = sample_times(cfg, 500, rng);
  CHECK(c.minCoeff() >= 0.0);
  CHECK(c.maxCoeff() < 0.7);
  cfg.t_mode = TimeSampling::grid;
  cfg.grid_k = 7;
  const Vector g = sample_times(cfg, 500, rng);
  for (double t : g) {
    const double k = t / 0.1;
    CHECK(std::abs(k - std::round(k)) < 1e-9);
    CHECK(t < 0.7);
  }
  cfg.grid_k = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  TrainConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("training is deterministic and lowers the loss") {
  const LatentDataset ds = generate_gmm(random_gmm_spec(2, 3, 2.0, 0.2, 1), 200);
  SurrogateArch arch = small_arch(2, 8);
  arch.hidden = {32, 32};
  for (TimeSampling mode : {TimeSampling::continuous, TimeSampling::grid}) {
    for (Coupling coupling : {Coupling::random, Coupling::minibatch_ot}) {
      TrainConfig cfg;
      cfg.steps = 400;
      cfg.seed = 3;
      cfg.t_mode = mode;
      cfg.coupling = coupling;
      Rng i1(1), i2(1);
      SurrogateModel a(arch, i1, cfg.ema_decay), b(arch, i2, cfg.ema_decay);
      std::size_t calls = 0;
      const TrainResult ra = train(a, ds, cfg, [&](std::size_t step, const SurrogateModel&) { calls = step; });
      const TrainResult rb = train(b, ds, cfg);
      CHECK(calls == 400);
      CHECK(ra.loss == rb.loss);
      CHECK(a.params() == b.params());
      CHECK(a.ema() == b.ema());
      const auto head = std::accumulate(ra.loss.begin(), ra.loss.begin() + 50, 0.0);
      const auto tail = std::accumulate(ra.loss.end() - 50, ra.loss.end(), 0.0);
      CHECK(tail < 0.7 * head);
    }
  }
}

TEST_CASE("checkpoint round trip and corruption") {
  Rng rng(11);
  SurrogateModel m(small_arch(), rng, 0.97);
  m.params().array() += 0.25;
  const auto path = temp_file("ok.lfsm");
  save_checkpoint(m, "{\"seed\":1}", path);
  const Checkpoint c = load_checkpoint(path);
  CHECK(c.model.params() == m.params());
  CHECK(c.model.ema() == m.ema());
  CHECK(c.model.ema_decay() == 0.97);
  CHECK(c.model.arch().hidden == m.arch().hidden);
  CHECK(c.model.arch().time_embedding == 4);
  CHECK(c.config_json == "{\"seed\":1}");

  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto write = [](const std::filesystem::path& p, const std::vector<char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write(temp_file("magic.lfsm"), bad_magic);
  CHECK_THROWS_WITH_AS(load_checkpoint(temp_file("magic.lfsm")), doctest::Contains("magic"), IoError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  write(temp_file("short.lfsm"), truncated);
  CHECK_THROWS_WITH_AS(load_checkpoint(temp_file("short.lfsm")), doctest::Contains("truncated"), IoError);
  auto trailing = bytes;
  trailing.push_back('\0');
  write(temp_file("long.lfsm"), trailing);
  CHECK_THROWS_AS(load_checkpoint(temp_file("long.lfsm")), IoError);
  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.lfsm")), IoError);
  for (const char* n : {"ok.lfsm", "magic.lfsm", "short.lfsm", "long.lfsm"}) std::filesystem::remove(temp_file(n));
}

TEST_CASE("sample scores") {
  const LatentDataset ds = generate_gmm(random_gmm_spec(3, 2, 2.0, 0.3, 2), 40);
  Rng rng(12);
  const SurrogateModel m(small_arch(), rng);
  ScoreOptions opt;
  opt.noise_paths = 3;
  opt.timesteps = 4;
  Rng s1(5);
  const ScoreTable t = score_samples(m, ds, opt, s1);
  CHECK(t.times == std::vector<double>{0.125, 0.375, 0.625, 0.875});
  CHECK(t.noise.rows() == 3);
  // Per-timestep normalizers are means over samples, so scores average to 1.
  const double mean_loss = std::accumulate(t.loss.begin(), t.loss.end(), 0.0) / 40.0;
  const double mean_grad = std::accumulate(t.grad.begin(), t.grad.end(), 0.0) / 40.0;
  CHECK(mean_loss == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean_grad == doctest::Approx(1.0).epsilon(1e-12));

  // Raw loss score of one sample by hand.
  ScoreOptions raw = opt;
  raw.normalize = false;
  Rng s2(5);
  const ScoreTable r = score_samples(m, ds, raw, s2);
  CHECK(r.noise == t.noise);
  double expect = 0.0;
  for (double tk : r.times)
    for (Eigen::Index mm = 0; mm < 3; ++mm) {
      const Vector x0 = r.noise.row(mm).transpose(), x1 = ds.row(7).transpose();
      expect += fm_loss(m, m.ema(), x0, x1, tk).loss / 12.0;
    }
  CHECK(r.loss[7] == doctest::Approx(expect).epsilon(1e-12));

  // Two-pass scores do not depend on row order; the streaming mode does.
  std::vector<std::size_t> rows(40);
  std::iota(rows.rbegin(), rows.rend(), std::size_t{0});
  const LatentDataset rev = ds.subset(rows);
  Rng s3(5);
  const ScoreTable tr = score_samples(m, rev, opt, s3);
  for (std::size_t i = 0; i < 40; ++i) CHECK(tr.loss[39 - i] == doctest::Approx(t.loss[i]).epsilon(1e-12));
  ScoreOptions stream = opt;
  stream.two_pass = false;
  Rng s4(5), s5(5);
  const ScoreTable sa = score_samples(m, ds, stream, s4);
  const ScoreTable sb = score_samples(m, rev, stream, s5);
  double worst = 0.0;
  for (std::size_t i = 0; i < 40; ++i) worst = std::max(worst, std::abs(sb.loss[39 - i] - sa.loss[i]));
  CHECK(worst > 1e-9);

  // CSV round trip aligned by id.
  const auto path = temp_file("scores.csv");
  write_scores_csv(t, path);
  const LoadedScores loaded = read_scores_csv(path, rev);
  for (std::size_t i = 0; i < 40; ++i) CHECK(loaded.loss[39 - i] == t.loss[i]);
  const LatentDataset other = generate_gmm(random_gmm_spec(3, 2, 2.0, 0.3, 2), 5, 1000);
  CHECK_THROWS_AS(read_scores_csv(path, other), IoError);
  std::filesystem::remove(path);

  ScoreOptions none = opt;
  none.noise_paths = 0;
  Rng s6(1);
  CHECK_THROWS_AS(score_samples(m, ds, none, s6), ValidationError);
}
