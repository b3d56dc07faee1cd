#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "falldet/experiments/ablation.hpp"
#include "falldet/experiments/baselines.hpp"
#include "falldet/experiments/evaluate.hpp"
#include "falldet/experiments/metrics.hpp"
#include "falldet/experiments/pipeline.hpp"
#include "support.hpp"

using namespace falldet;
using namespace falldet::exp;

namespace {

/// Counts and ratios straight from their definitions.
struct BruteForce {
  double accuracy, precision, recall, f1;
};

BruteForce brute_force(const std::vector<Label>& truth, const std::vector<Label>& pred) {
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == Label::Fall, p = pred[i] == Label::Fall;
    if (t && p) ++tp;
    if (!t && p) ++fp;
    if (t && !p) ++fn;
    if (t == p) ++correct;
  }
  auto div = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  const double precision = div(tp, tp + fp), recall = div(tp, tp + fn);
  const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  return {div(correct, truth.size()), precision, recall, f1};
}

std::vector<Prediction> per_category(std::size_t per_cat, Label always) {
  std::vector<Prediction> out;
  for (int cat : kCategories)
    for (std::size_t i = 0; i < per_cat; ++i)
      out.push_back({always == Label::Fall ? 0.9 : 0.1, label_for_category(cat), always, cat});
  return out;
}

FeatureMatrix blob(std::size_t rows, std::size_t cols, float centre, std::uint64_t seed) {
  FeatureMatrix x(rows, cols, FeatureKind::Diff);
  Rng rng(seed);
  for (auto& v : x.data) v = centre + static_cast<float>(uniform(rng, -0.5, 0.5));
  return x;
}

}  // namespace

TEST(Metrics, WorkedExample) {
  const std::vector<Label> truth = {Label::Fall, Label::Fall, Label::Fall, Label::NoFall, Label::NoFall};
  const std::vector<Label> pred = {Label::Fall, Label::Fall, Label::NoFall, Label::Fall, Label::NoFall};
  const Confusion c = confusion(truth, pred);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.tn, 1u);
  EXPECT_DOUBLE_EQ(c.accuracy(), 0.6);
  EXPECT_DOUBLE_EQ(c.precision(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.recall(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.f1(), 2.0 / 3.0);
}

TEST(Metrics, ZeroDenominatorsGiveZero) {
  const Confusion c = confusion(std::vector<Label>{Label::NoFall}, std::vector<Label>{Label::NoFall});
  EXPECT_EQ(c.precision(), 0.0);
  EXPECT_EQ(c.recall(), 0.0);
  EXPECT_EQ(c.f1(), 0.0);
  EXPECT_EQ(c.accuracy(), 1.0);
  EXPECT_EQ(Confusion{}.accuracy(), 0.0);
  EXPECT_THROW(confusion(std::vector<Label>{Label::Fall}, std::vector<Label>{}), ShapeMismatch);
}

TEST(Metrics, ThousandRandomSetsMatchBruteForce) {
  Rng rng(2023);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = uniform_index(rng, 60);
    std::vector<Label> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = uniform01(rng) < 0.3 ? Label::Fall : Label::NoFall;
      pred[i] = uniform01(rng) < 0.4 ? Label::Fall : Label::NoFall;
    }
    const Confusion c = confusion(truth, pred);
    const BruteForce b = brute_force(truth, pred);
    ASSERT_EQ(c.total(), n);
    ASSERT_EQ(c.accuracy(), b.accuracy) << trial;
    ASSERT_EQ(c.precision(), b.precision) << trial;
    ASSERT_EQ(c.recall(), b.recall) << trial;
    ASSERT_EQ(c.f1(), b.f1) << trial;
  }
}

TEST(Metrics, ThresholdSweepIsMonotoneInRecall) {
  Rng rng(1);
  std::vector<double> p(200);
  std::vector<Label> y(200);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = uniform01(rng);
    y[i] = uniform01(rng) < p[i] ? Label::Fall : Label::NoFall;
  }
  const auto sweep = threshold_sweep(p, y, default_thresholds());
  ASSERT_EQ(sweep.size(), 99u);
  for (std::size_t i = 1; i < sweep.size(); ++i) EXPECT_LE(sweep[i].recall, sweep[i - 1].recall);
}

TEST(Pairwise, AlwaysFallHasFullRecall) {
  const auto stats = pairwise_from(per_category(3, Label::Fall));
  ASSERT_EQ(stats.size(), 15u);
  for (const auto& [k, s] : stats) {
    EXPECT_EQ(s.recall, 1.0);
    EXPECT_EQ(s.precision, 0.5);
    EXPECT_EQ(s.n_fall, 3u);
    EXPECT_EQ(s.n_nofall, 3u);
  }
}

TEST(Pairwise, AlwaysNoFallHasZeroRecall) {
  for (const auto& [k, s] : pairwise_from(per_category(2, Label::NoFall))) {
    EXPECT_EQ(s.recall, 0.0);
    EXPECT_EQ(s.accuracy, 0.5);
  }
}

TEST(Pairwise, ChangingOneCategoryOnlyMovesItsPairs) {
  auto preds = per_category(4, Label::Fall);
  const auto before = pairwise_from(preds);
  for (auto& p : preds)
    if (p.category == 6) p.predicted = Label::NoFall;
  const auto after = pairwise_from(preds);
  for (const auto& [k, s] : after) {
    if (k.first == 6) {
      EXPECT_EQ(s.recall, 0.0);
    } else {
      EXPECT_EQ(s.recall, before.at(k).recall);
      EXPECT_EQ(s.precision, before.at(k).precision);
    }
  }
}

TEST(Pairwise, MissingCategoryIsAnError) {
  auto preds = per_category(1, Label::Fall);
  std::erase_if(preds, [](const Prediction& p) { return p.category == 4; });
  EXPECT_THROW(pairwise_from(preds), MissingCategory);
}

TEST(Report, JsonCarriesCountsAndSweep) {
  const EvalReport r = report_from(per_category(2, Label::Fall));
  const auto j = to_json(r);
  EXPECT_EQ(j.at("tp").get<int>(), 10);
  EXPECT_EQ(j.at("fp").get<int>(), 6);
  EXPECT_EQ(j.at("threshold_sweep").size(), 99u);
}

TEST(Ablation, GridsHaveTheDocumentedCells) {
  const auto hl = ablation_cells(AblationAxis::HeadsLayers);
  ASSERT_EQ(hl.size(), 12u);
  std::set<std::pair<int, int>> grid;
  for (const auto& c : hl) grid.insert({c.n_heads, c.n_layers});
  EXPECT_EQ(grid.size(), 12u);
  EXPECT_TRUE(grid.count({12, 12}));
  EXPECT_EQ(hl.front().config_id, "B");
  EXPECT_EQ(ablation_cells(AblationAxis::HeadsLayers, FeatureKind::LogMel).front().config_id, "C");
  EXPECT_EQ(ablation_cells(AblationAxis::Mels).size(), 3u);
  EXPECT_EQ(ablation_cells(AblationAxis::Hop).size(), 3u);
  EXPECT_EQ(ablation_cells(AblationAxis::Combined).front().features.kind, FeatureKind::Combined);
  EXPECT_EQ(parse_axis("tseg"), AblationAxis::TSeg);
  EXPECT_THROW(parse_axis("depth"), InvalidConfig);
}

TEST(Ablation, SegmentLengthCellsProduceTheirShapes) {
  const std::vector<std::string> expected = {"173x800", "86x1600", "28x4800", "16x8000"};
  const auto cells = ablation_cells(AblationAxis::TSeg);
  ASSERT_EQ(cells.size(), 4u);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const FeatureShape s = feature_shape(139760, cells[i].features);
    EXPECT_EQ(std::to_string(s.rows) + "x" + std::to_string(s.cols), expected[i]);
    const nn::ModelConfig cfg = cell_config(cells[i], s);
    EXPECT_EQ(cfg.input_dim, static_cast<int>(s.cols));
    EXPECT_EQ(cfg.max_frames, static_cast<int>(s.rows));
  }
}

class TinyAblation : public ::testing::Test {
 protected:
  SourceFactory factory = [](const FeatureSpec&) {
    auto make = [](std::size_t n, std::uint64_t seed) {
      auto src = std::make_shared<nn::InMemorySource>();
      for (std::size_t i = 0; i < n; ++i) {
        const bool fall = i % 2 == 0;
        src->add(blob(4, 6, fall ? 0.5f : -0.5f, seed + i), fall ? Label::Fall : Label::NoFall, fall ? 1 : 2);
      }
      return src;
    };
    SplitSources s;
    s.train = make(8, 0);
    s.val = make(4, 100);
    s.test = make(4, 200);
    return s;
  };
  AblationOptions opt() const {
    AblationOptions o;
    o.train.epochs = 2;
    o.train.batch_size = 4;
    o.train.lr = 1e-3;
    o.train.seed = 3;
    o.adjust = [](nn::ModelConfig& c) {
      c.d_model = 6;
      c.ff_dim = 8;
      c.mlp_head = {4};
      c.n_layers = std::min(c.n_layers, 2);
    };
    return o;
  }
};

TEST_F(TinyAblation, RunsEveryCellDeterministically) {
  auto cells = ablation_cells(AblationAxis::HeadsLayers);
  cells.resize(3);
  const AblationTable a = run_ablation(AblationAxis::HeadsLayers, cells, factory, opt());
  const AblationTable b = run_ablation(AblationAxis::HeadsLayers, cells, factory, opt());
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(table_csv(a).substr(0, table_csv(a).find('\n')),
            "axis,setting,features,shape,accuracy,f1,precision,recall,seconds,error");
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_TRUE(a.rows[i].error.empty()) << a.rows[i].error;
    EXPECT_EQ(a.rows[i].shape, "4x6");
    EXPECT_EQ(a.rows[i].accuracy, b.rows[i].accuracy);
  }
  EXPECT_EQ(a.curves.size(), 6u);
  EXPECT_EQ(curves_csv(a), curves_csv(b));
}

TEST_F(TinyAblation, FailingCellIsRecordedAndTheRunContinues) {
  auto o = opt();
  o.adjust = [](nn::ModelConfig& c) {
    c.d_model = 6;
    c.ff_dim = 8;
    c.n_layers = 1;
    if (c.n_heads == 3) c.dropout = 2.0;
  };
  auto cells = ablation_cells(AblationAxis::HeadsLayers);
  const AblationTable t = run_ablation(AblationAxis::HeadsLayers, {cells[0], cells[3]}, factory, o);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_TRUE(t.rows[0].error.empty());
  EXPECT_FALSE(t.rows[1].error.empty());
  o.only_cell = cells[0].setting;
  EXPECT_EQ(run_ablation(AblationAxis::HeadsLayers, cells, factory, o).rows.size(), 1u);
}

TEST(Baselines, DenseNetworkSeparatesBlobs) {
  nn::InMemorySource train_src, test_src;
  for (std::size_t i = 0; i < 40; ++i) {
    const bool fall = i % 2 == 0;
    train_src.add(blob(3, 5, fall ? 0.4f : -0.4f, i), fall ? Label::Fall : Label::NoFall);
    test_src.add(blob(3, 5, fall ? 0.4f : -0.4f, 1000 + i), fall ? Label::Fall : Label::NoFall);
  }
  DenseClassifier<float> dnn(3, 5, {16, 8}, 0.1, 1);
  nn::TrainOptions o;
  o.epochs = 20;
  o.batch_size = 8;
  o.lr = 1e-3;
  nn::train(dnn, train_src, nullptr, o);
  EXPECT_GE(evaluate(dnn, test_src).accuracy, 0.95);
}

TEST(Baselines, LinearSvmOnSeparableData) {
  Eigen::MatrixXf X(40, 2);
  std::vector<int> y(40);
  Rng rng(4);
  for (int i = 0; i < 40; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2 ? 1 : -1;
    X(i, 0) = static_cast<float>(y[static_cast<std::size_t>(i)] * 2 + uniform(rng, -0.8, 0.8));
    X(i, 1) = static_cast<float>(uniform(rng, -1.0, 1.0));
  }
  SvmOptions o;
  o.c = 10;
  o.tolerance = 1e-6;
  const SvmFit fit = train_svm(X, y, o);
  EXPECT_TRUE(fit.model.converged);
  EXPECT_LE(kkt_violation(fit, y, o.c), 1e-3);
  for (int i = 0; i < 40; ++i) EXPECT_GT(y[static_cast<std::size_t>(i)] * fit.train_decision(i), 0.0);
  EXPECT_LT(fit.model.support.rows(), 40);
  // Stored support vectors reproduce the training decision values.
  for (int i = 0; i < 40; ++i) EXPECT_NEAR(fit.model.decision(X.row(i).transpose()), fit.train_decision(i), 1e-4);
}

TEST(Baselines, RbfSvmSolvesXor) {
  Eigen::MatrixXf X(4, 2);
  X << 0, 0, 1, 1, 0, 1, 1, 0;
  const std::vector<int> y = {-1, -1, 1, 1};
  SvmOptions o;
  o.kernel = Kernel::Rbf;
  o.gamma = 2.0;
  o.c = 100;
  const SvmFit fit = train_svm(X, y, o);
  EXPECT_TRUE(fit.model.converged);
  for (int i = 0; i < 4; ++i) EXPECT_GT(y[static_cast<std::size_t>(i)] * fit.model.decision(X.row(i).transpose()), 0.0);
  EXPECT_LE(kkt_violation(fit, y, o.c), 1e-3);
  EXPECT_THROW(train_svm(X, {1, -1}, o), ShapeMismatch);
}
