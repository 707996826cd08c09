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

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lid {

#ifdef LID_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

using Index = Eigen::Index;

template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowMatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vector = VectorX<Scalar>;
using RowMatrix = RowMatrixX<Scalar>;

/// Phoneme ids 1..V; blank (0) never appears inside a label sequence.
using LabelSeq = std::vector<int>;

enum class ErrorCode {
  kInvalidShape,
  kInvalidAxis,
  kNotScalar,
  kFilterbankDegenerate,
  kTooShort,
  kInputTooShort,
  kInfeasibleLabel,
  kOracleTooLarge,
  kNumericalFault,
  kIncompatibleCheckpoint,
  kDataFault,
  kIoFault,
  kParseFault,
  kDuplicateId,
  kEmptyTestSet,
  kConfigFault,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Process exit status for an error: 3 for numerical faults, 2 otherwise.
int exit_code_for(ErrorCode code);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);

/// Worker count honouring LID_THREADS; at least 1.
int worker_threads();

}  // namespace lid
