#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace contab::cli {

enum ExitCode : int {
    kSuccess = 0,
    kUsageError = 1,
    kDataError = 2,
    kDivergence = 3,
};

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "CONTAB_OUTPUT_DIR";

/// Entry point for `contab <command> [flags]`. Subcommands: schema,
/// preprocess, pretrain, finetune, embed, eval, ablate.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace contab::cli
