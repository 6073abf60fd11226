// Small end-to-end run in memory: synthesise identities, pretrain a backbone,
// degrade and restore the data, then compare the four strategies.

#include <cstdio>

#include "fadapt/fadapt.hpp"

int main() {
  using namespace fadapt;
  RunConfig c;
  auto& e = c.exp;
  e.dataset.train_identities = 32;
  e.dataset.train_per_identity = 24;
  e.dataset.test_identities = 8;
  e.dataset.test_per_identity = 10;
  e.eval.n_genuine = e.eval.n_impostor = 100;
  validate(c);

  const std::uint64_t seed = 7;
  auto w = make_workbench(e, seed);
  std::printf("pretrain loss %.3f -> %.3f\n", w.base.initial_loss, w.base.final_loss);
  {
    auto clean = embed_all(select_images(w.data.test, w.probe_idx), w.base.backbone);
    auto o = evaluate_probes(w.gallery, w.gallery_labels, clean, w.probe_labels, e.eval, seed);
    std::printf("clean probes      accuracy %7.3f\n", percent3(o.report.accuracy));
  }
  auto d = make_degraded(w, e, e.level, seed);
  std::printf("MSE(clean, lq) %.4f  MSE(clean, restored) %.4f\n", mean_mse(d.test_lq, w.data.test),
              mean_mse(d.test_restored, w.data.test));
  for (auto s : {Strategy::baseline_lq, Strategy::eval_restored, Strategy::finetune_restored, Strategy::adapter_joint}) {
    auto r = run_strategy(s, w, d, e, seed);
    std::printf("%-18s accuracy %7.3f  TAR@0.01FAR %7.3f  steps %zu\n", to_string(s).c_str(),
                percent3(r.outcome.report.accuracy), percent3(r.outcome.report.tar_at_far.at(0.01)), r.optimizer_steps);
  }
}
