// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force message passing (AGGREGATE / COMBINE / READOUT) used as the
// oracle for the attention-layer constructions.

#pragma once

#include <Eigen/Core>

#include <functional>
#include <span>

#include "graphormer/graph.hpp"

namespace graphormer {

enum class Aggregation { kMean, kSum, kMax };
enum class Readout { kMean, kSum };

/// combine(h_i, a_i) -> new h_i.
using Combine = std::function<Eigen::RowVectorXd(const Eigen::RowVectorXd&, const Eigen::RowVectorXd&)>;

struct ReferenceGNN {
  Aggregation aggregation = Aggregation::kMean;
  Combine combine;  // empty: returns the aggregate
  Readout readout = Readout::kMean;
};

/// One AGGREGATE-COMBINE step over out-neighbors (deduplicated, self loops
/// excluded). Isolated nodes aggregate to the zero vector.
Eigen::MatrixXd reference_gnn_step(const Graph& g, const Eigen::MatrixXd& h, Aggregation kind,
                                   const Combine& combine = {});

/// Column MEAN or SUM over rows with valid[i] != 0 (all rows when empty).
Eigen::RowVectorXd reference_readout(const Eigen::MatrixXd& h, Readout kind, std::span<const std::uint8_t> valid = {});

}  // namespace graphormer
