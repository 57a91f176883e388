/*
 * Copyright 2026 The ctrla Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>

#include "ctrla/core.hpp"

namespace ctrla {

enum class SteerDirection { increase = 1, decrease = -1 };

/// Linear steering of hidden states along a layerwise feature.
class SteeringConfig {
public:
    SteeringConfig(LayerwiseFeature feature, double lambda, LayerRange layer_range,
                   SteerDirection direction = SteerDirection::increase)
        : feature_(std::move(feature)), lambda_(lambda), range_(layer_range), direction_(direction) {
        if (!std::isfinite(lambda_)) throw ConfigError("lambda", "must be finite");
        for (int l = range_.first; l <= range_.last; ++l) {
            if (!feature_.has_layer(l)) {
                throw ConfigError("layer_range", "layer " + std::to_string(l) + " not covered by feature");
            }
        }
    }

    const LayerwiseFeature& feature() const noexcept { return feature_; }
    double lambda() const noexcept { return lambda_; }
    const LayerRange& layer_range() const noexcept { return range_; }
    SteerDirection direction() const noexcept { return direction_; }
    double signed_lambda() const noexcept { return static_cast<int>(direction_) * lambda_; }

private:
    LayerwiseFeature feature_;
    double lambda_;
    LayerRange range_;
    SteerDirection direction_;
};

/// sign * lambda * v^l inside the range, the zero vector elsewhere.
inline Vector steering_delta(const SteeringConfig& config, int layer) {
    const auto& f = config.feature();
    const Vector* v = config.layer_range().contains(layer) ? f.vector_for(layer) : nullptr;
    if (!v) return Vector(static_cast<std::size_t>(f.hidden_dim()), 0.0);
    return scaled(*v, config.signed_lambda());
}

/// Returns a copy of `frame` with every steered layer shifted by its delta.
/// A zero lambda returns the frame bit-for-bit.
inline HiddenFrame apply_steering(const HiddenFrame& frame, const SteeringConfig& config) {
    if (!frame.reps().empty() && frame.hidden_dim() != config.feature().hidden_dim()) {
        throw DimMismatch("steering: frame hidden_dim " + std::to_string(frame.hidden_dim()) +
                          " vs feature " + std::to_string(config.feature().hidden_dim()));
    }
    const double coeff = config.signed_lambda();
    if (coeff == 0.0) return frame;
    std::map<int, Vector> reps = frame.reps();
    for (auto& [layer, rep] : reps) {
        if (!config.layer_range().contains(layer)) continue;
        const Vector* v = config.feature().vector_for(layer);
        if (v) axpy(coeff, *v, rep);
    }
    return HiddenFrame(frame.token_id(), frame.token_text(), std::move(reps));
}

}  // namespace ctrla
