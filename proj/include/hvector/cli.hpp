// Copyright 2026  The hvector Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef HVECTOR_CLI_HPP_
#define HVECTOR_CLI_HPP_

#include <ostream>

namespace hvector {

/// Entry point of the `hvector` tool. Subcommands: synth, prepare, train,
/// embed, score-id, score-ver. Returns the process exit code; errors are
/// reported on `err` rather than thrown.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hvector

#endif  // HVECTOR_CLI_HPP_
