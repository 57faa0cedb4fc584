#pragma once

#include <algorithm>
#include <cstdint>
#include <span>

#include "maskmatch/errors.hpp"

namespace maskmatch {

/// Unlabeled-data utilization of one iteration. `actual` counts each sample
/// once if it reaches any loss term; `theoretical` counts it once per term.
struct UtilizationRecord {
  std::int64_t iteration = 0;
  double actual = 0.0;
  double theoretical = 0.0;
  std::size_t pass_count = 0;
  std::size_t clean_count = 0;
};

/// `unsup_enabled` says whether passing samples feed the unsupervised term;
/// clean_count is the number entering the synthetic term (0 when it is off).
inline UtilizationRecord compute_utilization(std::size_t batch_unlabeled, std::span<const std::uint8_t> mask,
                                             std::size_t clean_count, bool mae_enabled,
                                             bool unsup_enabled = true) {
  if (batch_unlabeled == 0) throw PreconditionError("utilization needs a nonempty unlabeled batch");
  if (mask.size() != batch_unlabeled) throw ShapeError("mask length differs from unlabeled batch size");
  if (clean_count > batch_unlabeled) throw PreconditionError("clean set larger than unlabeled batch");
  const auto passed = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  const double n = static_cast<double>(batch_unlabeled);
  UtilizationRecord r;
  r.pass_count = passed;
  r.clean_count = clean_count;
  const std::size_t mae_count = mae_enabled ? batch_unlabeled : 0;
  const std::size_t unsup_count = unsup_enabled ? passed : 0;
  std::size_t touched = mae_enabled ? batch_unlabeled : std::max(unsup_count, clean_count);
  r.actual = static_cast<double>(touched) / n;
  r.theoretical = static_cast<double>(mae_count + unsup_count + clean_count) / n;
  return r;
}

}  // namespace maskmatch
