#pragma once

#include <cstdint>
#include <string>

namespace cslb::cli {

// Exit codes: 0 success, 2 config/validation error, 3 I/O error,
// 4 numeric or internal failure. Usage errors return CLI11's own codes.

int cmd_train(const std::string& config_path, const std::string& out_dir,
              bool force_gated = false);

int cmd_ablate(const std::string& config_path, double alpha,
               const std::string& out_dir);

struct AnalyzeOptions {
  int k = -1;                     // -1: use the checkpoint's lens config
  std::string anchors;            // "", "hidden" or "embedding"
  int seq_len = -1;               // -1: min(128, max_seq_len)
  std::int64_t max_sequences = 64;  // 0 = no cap
  bool exclude_position0 = false;
  std::int64_t table_positions = 8;
};

int cmd_analyze(const std::string& checkpoint_path,
                const std::string& corpus_path, const AnalyzeOptions& opts,
                const std::string& out_dir);

int cmd_eval(const std::string& checkpoint_path,
             const std::string& corpus_path, int seq_len = -1);

// Full argv entry point (CLI11 command wiring).
int run_main(int argc, const char* const* argv);

}  // namespace cslb::cli
