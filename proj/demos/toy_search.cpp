// Small end-to-end search on the toy space: train a supernet briefly, slim it
// against the synthetic cost model, retrain the result and report accuracy
// and estimated latency. Sizes are kept small so it finishes in a minute or
// two on one core.

#include <iostream>

#include "effnas/effnas.hpp"

using namespace effnas;

int main(int argc, char** argv) {
  const double fraction = argc > 1 ? std::stod(argv[1]) : 0.6;
  train::DatasetSpec ds;
  ds.train = 256;
  ds.val = 64;
  ds.test = 128;
  ds.seed = 3;
  const auto data = train::gen_synthetic(ds);

  auto sn = supernet::SuperNet<float>::create(supernet::SearchSpace::from_arch(arch::preset("toy")), 3);
  train::SupernetTrainConfig sc;
  sc.base.epochs = 2;
  sc.base.batch_size = 32;
  sc.base.base_lr = 2e-3;  // few steps, so a larger rate than the batch rule
  sc.base.on_epoch = [](const train::MetricRow& r) {
    std::cout << "supernet epoch " << r.epoch << " loss " << r.loss << "\n";
  };
  train::train_supernet(sn, data.train, sc);

  const auto table = search::build_space_table(sn.space(), true).table;
  search::SlimRequest req;
  req.target_fraction = fraction;
  const auto slimmed = search::slim_supernet(sn, table, data.val, req);
  std::cout << slim::trace_table(slimmed.result, sn.space());

  train::TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 32;
  tc.base_lr = 2e-3;
  auto final = train::train_final(slimmed.result.spec, data.train, tc);
  std::cout << "test top-1 " << train::evaluate(final.model, data.test) << "\n";
  std::cout << arch::to_json(slimmed.result.spec) << "\n";
}
