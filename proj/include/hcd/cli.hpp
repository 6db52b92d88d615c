// Command-line front end: synth / train / eval / dehaze / inspect / curves.
// Exit codes: 0 success, 1 usage or data error, 2 internal fault.
#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hcd/common.hpp"
#include "hcd/config.hpp"
#include "hcd/dataset.hpp"
#include "hcd/evaluate.hpp"
#include "hcd/image_io.hpp"
#include "hcd/metrics.hpp"
#include "hcd/network.hpp"
#include "hcd/serialize.hpp"
#include "hcd/train.hpp"

namespace hcd {

namespace detail {

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
};

inline void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--config", c.config, "JSON config file (defaults used when omitted)");
  sub->add_option("--set", c.sets, "dotted override, e.g. --set train.batch=4")
      ->take_all()
      ->allow_extra_args(false);
}

inline std::string with_suffix(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  auto ext = p.extension().string();
  auto stem = (p.parent_path() / p.stem()).string();
  return stem + suffix + (ext.empty() ? std::string(".png") : ext);
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"hierarchical dehazing toolkit"};
  app.require_subcommand(1);

  detail::CommonOpts synth_c, train_c, eval_c, dehaze_c, curves_c;

  auto* synth = app.add_subcommand("synth", "render a synthetic hazy/clear dataset");
  std::string synth_clear, synth_out;
  synth->add_option("--clear", synth_clear, "directory of clear PNG images")->required();
  synth->add_option("--out", synth_out, "output dataset root")->required();
  detail::add_common(synth, synth_c);

  auto* train = app.add_subcommand("train", "train a model on a paired dataset");
  std::string train_data, train_out;
  train->add_option("--data", train_data, "dataset root with hazy/ and clear/")->required();
  train->add_option("--out", train_out, "run output directory")->required();
  detail::add_common(train, train_c);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a paired dataset");
  std::string eval_data, eval_out, eval_ckpt, eval_mode;
  eval->add_option("--data", eval_data, "dataset root with hazy/ and clear/")->required();
  eval->add_option("--out", eval_out, "report output directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint archive")->required();
  eval->add_option("--mode", eval_mode, "psnr mode: rgb or y-channel (overrides eval.mode)");
  detail::add_common(eval, eval_c);

  auto* dehaze = app.add_subcommand("dehaze", "run one image through the model");
  std::string dh_in, dh_out, dh_ckpt;
  bool dh_all_scales = false;
  dehaze->add_option("--input", dh_in, "hazy input PNG")->required();
  dehaze->add_option("--output", dh_out, "restored output PNG")->required();
  dehaze->add_option("--checkpoint", dh_ckpt,
                     "checkpoint archive (omitted: untrained seeded weights)");
  dehaze->add_flag("--all-scales", dh_all_scales, "also write _half and _quarter outputs");
  detail::add_common(dehaze, dehaze_c);

  auto* inspect = app.add_subcommand(
      "inspect", "print the model parameter table, or describe an archive file");
  detail::CommonOpts inspect_c;
  std::string ins_path;
  inspect->add_option("path", ins_path, "archive to describe (omitted: model table)");
  detail::add_common(inspect, inspect_c);

  auto* curves = app.add_subcommand("curves", "plot metrics CSVs and summarize");
  std::vector<std::string> curves_csv;
  std::string curves_out;
  curves->add_option("--csv", curves_csv, "metrics.csv file (repeatable)")
      ->required()
      ->take_all();
  curves->add_option("--out", curves_out, "plot/summary output directory")->required();
  detail::add_common(curves, curves_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(synth)) {
      auto cfg = resolve_config(synth_c.config, synth_c.sets);
      SynthConfig sc = synth_config_from_json(cfg.at("synth"));
      std::string manifest = synth_dataset(synth_clear, synth_out, sc);
      echo_effective_config(cfg, synth_out);
      std::cout << "wrote " << sc.n << " pairs under " << synth_out << "\n"
                << "manifest: " << manifest << "\n";
    } else if (app.got_subcommand(train)) {
      auto cfg = resolve_config(train_c.config, train_c.sets);
      TrainState state = run_training(cfg, train_data, train_out, &std::cout);
      std::cout << "finished at step " << state.step << "\n"
                << "checkpoint: " << train_out << "/checkpoint_final.ckpt\n";
    } else if (app.got_subcommand(eval)) {
      auto cfg = resolve_config(eval_c.config, eval_c.sets);
      std::string mode_s = eval_mode.empty()
                               ? cfg.at("eval").value("mode", std::string("rgb"))
                               : eval_mode;
      PsnrMode mode = psnr_mode_from_string(mode_s);
      TrainState state = load_checkpoint(eval_ckpt);
      EvalReport rep = evaluate_dir(state.model, eval_data, mode,
                                    std::filesystem::path(eval_ckpt).filename().string(),
                                    config_fingerprint(cfg));
      write_eval_report(rep, eval_out);
      echo_effective_config(cfg, eval_out);
      if (rep.empty())
        std::cout << "no pairs evaluated (" << rep.skipped.size() << " unpaired)\n";
      else
        std::cout << "evaluated " << rep.rows.size() << " pairs: mean psnr " << rep.mean_psnr()
                  << " db, mean ssim " << rep.mean_ssim() << "\n";
      std::cout << "report: " << eval_out << "/report.json\n";
    } else if (app.got_subcommand(dehaze)) {
      auto cfg = resolve_config(dehaze_c.config, dehaze_c.sets);
      Tensor hazy = load_image(dh_in);
      Tensor out;
      std::array<Tensor, 3> scales;
      if (!dh_ckpt.empty()) {
        TrainState state = load_checkpoint(dh_ckpt);
        if (dh_all_scales) scales = dehaze_image_scales(state.model, hazy);
        else out = dehaze_image(state.model, hazy);
      } else {
        std::cerr << "warning: no --checkpoint given, using untrained seeded weights\n";
        Hdn model(model_config_from_json(cfg.at("model")));
        if (dh_all_scales) scales = dehaze_image_scales(model, hazy);
        else out = dehaze_image(model, hazy);
      }
      if (dh_all_scales) {
        save_image(scales[0], dh_out);
        save_image(scales[1], detail::with_suffix(dh_out, "_half"));
        save_image(scales[2], detail::with_suffix(dh_out, "_quarter"));
      } else {
        save_image(out, dh_out);
      }
      auto parent = std::filesystem::path(dh_out).parent_path();
      echo_effective_config(cfg, parent.empty() ? "." : parent.string());
      std::cout << "wrote " << dh_out << "\n";
    } else if (app.got_subcommand(inspect)) {
      if (!ins_path.empty()) {
        ArrayArchive a = load_archive(ins_path);
        nlohmann::json arrays = nlohmann::json::array();
        size_t total = 0;
        for (const auto& [name, t] : a.arrays) {
          arrays.push_back({{"name", name}, {"shape", t.shape}, {"numel", t.numel()}});
          total += t.numel();
        }
        nlohmann::json out = {
            {"path", ins_path}, {"meta", a.meta}, {"arrays", arrays}, {"total_scalars", total}};
        std::cout << out.dump(2) << "\n";
      } else {
        auto cfg = resolve_config(inspect_c.config, inspect_c.sets);
        Hdn model(model_config_from_json(cfg.at("model")));
        // Group parameters by the leading dotted segment of their name.
        std::vector<std::pair<std::string, long long>> groups;
        for (const auto& item : model.params.items) {
          const std::string mod = item.name.substr(0, item.name.find('.'));
          if (groups.empty() || groups.back().first != mod) groups.emplace_back(mod, 0);
          groups.back().second += static_cast<long long>(item.var.val().numel());
        }
        std::printf("%-12s %12s\n", "module", "params");
        for (const auto& [mod, n] : groups) std::printf("%-12s %12lld\n", mod.c_str(), n);
        std::printf("%-12s %12lld\n", "total", model.param_count());
      }
    } else if (app.got_subcommand(curves)) {
      auto cfg = resolve_config(curves_c.config, curves_c.sets);
      emit_curves(curves_csv, curves_out);
      echo_effective_config(cfg, curves_out);
      std::cout << "summary: " << curves_out << "/summary.json\n";
    }
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace hcd
