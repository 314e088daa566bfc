// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "vtw/model.hpp"

namespace vtw::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum ExitCode : int {
    kExitOk = 0,
    kExitValidation = 2,
    kExitNotFound = 3,
    kExitIo = 4,
};

/// Runs one command line (args[0] is the subcommand). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Demo-only tokenizer: each byte maps to byte % vocab_size.
std::vector<TokenId> encode_bytes(std::string_view text, std::size_t vocab_size);

}  // namespace vtw::cli
