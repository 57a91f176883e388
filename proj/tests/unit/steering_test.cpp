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

#include <gtest/gtest.h>

#include "ctrla/steering.hpp"

using namespace ctrla;

namespace {

LayerwiseFeature feature3() {
    return LayerwiseFeature("m", 2, FeatureKind::honesty, {0, 1, 2}, {{1, 0}, {0, 1}, {0.6, 0.8}}, "s");
}

HiddenFrame frame3() { return HiddenFrame(7, "x", {{0, {1, 1}}, {1, {2, 2}}, {2, {3, 3}}, {3, {4, 4}}}); }

}  // namespace

TEST(Steering, AddsScaledDirectionInsideRangeOnly) {
    const SteeringConfig cfg(feature3(), 0.5, {1, 2});
    const auto out = apply_steering(frame3(), cfg);
    EXPECT_EQ(*out.rep(0), (Vector{1, 1}));
    EXPECT_EQ(*out.rep(1), (Vector{2, 2.5}));
    EXPECT_DOUBLE_EQ((*out.rep(2))[0], 3.3);
    EXPECT_DOUBLE_EQ((*out.rep(2))[1], 3.4);
    EXPECT_EQ(*out.rep(3), (Vector{4, 4}));
}

TEST(Steering, DecreaseNegatesTheShift) {
    const SteeringConfig cfg(feature3(), 0.5, {1, 1}, SteerDirection::decrease);
    EXPECT_EQ(*apply_steering(frame3(), cfg).rep(1), (Vector{2, 1.5}));
    EXPECT_EQ(steering_delta(cfg, 1), (Vector{0, -0.5}));
    EXPECT_EQ(steering_delta(cfg, 0), (Vector{0, 0}));
}

TEST(Steering, ZeroLambdaIsIdentity) {
    EXPECT_EQ(apply_steering(frame3(), SteeringConfig(feature3(), 0.0, {0, 2})), frame3());
}

TEST(Steering, RangeMustBeCoveredByFeature) {
    EXPECT_THROW(SteeringConfig(feature3(), 0.3, {1, 3}), ConfigError);
}

TEST(Steering, DimensionMismatch) {
    const HiddenFrame wide(1, "x", {{0, {1, 2, 3}}});
    EXPECT_THROW(apply_steering(wide, SteeringConfig(feature3(), 0.3, {0, 0})), DimMismatch);
}

TEST(Steering, ShiftAlongDirectionEqualsLambda) {
    const auto f = feature3();
    const SteeringConfig cfg(f, 0.7, {0, 2});
    const auto before = frame3();
    const auto after = apply_steering(before, cfg);
    for (int l = 0; l <= 2; ++l) {
        EXPECT_NEAR(dot(*after.rep(l), *f.vector_for(l)) - dot(*before.rep(l), *f.vector_for(l)), 0.7, 1e-15);
    }
}
