// Copyright 2026 The dialect-lid Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lid/common.hpp"

#include <cstdlib>
#include <thread>

namespace lid {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidShape: return "InvalidShape";
    case ErrorCode::kInvalidAxis: return "InvalidAxis";
    case ErrorCode::kNotScalar: return "NotScalar";
    case ErrorCode::kFilterbankDegenerate: return "FilterbankDegenerate";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kInputTooShort: return "InputTooShort";
    case ErrorCode::kInfeasibleLabel: return "InfeasibleLabel";
    case ErrorCode::kOracleTooLarge: return "OracleTooLarge";
    case ErrorCode::kNumericalFault: return "NumericalFault";
    case ErrorCode::kIncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::kDataFault: return "DataFault";
    case ErrorCode::kIoFault: return "IoFault";
    case ErrorCode::kParseFault: return "ParseFault";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kEmptyTestSet: return "EmptyTestSet";
    case ErrorCode::kConfigFault: return "ConfigFault";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  return code == ErrorCode::kNumericalFault ? 3 : 2;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

int worker_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("LID_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

}  // namespace lid
