// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "esbm/adam.hpp"
#include "esbm/checkpoint.hpp"
#include "esbm/checks.hpp"
#include "esbm/error.hpp"
#include "esbm/graph.hpp"
#include "esbm/io.hpp"
#include "support.hpp"

using namespace esbm;
using ad::Graph;
using ad::Tensor;

TEST_CASE("broadcast add over leading axes") {
  Graph g;
  auto a = g.input("a");
  auto b = g.input("b");
  auto c = g.add(a, b);
  Tensor A({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor B({3}, {10, 20, 30});
  const Tensor& out = g.evaluate(c, {{"a", &A}, {"b", &B}});
  CHECK(out.shape() == ad::Shape{2, 3});
  CHECK(out[4] == 25.0);
}

TEST_CASE("broadcast rejects non-suffix shapes") {
  Graph g;
  auto c = g.add(g.input("a"), g.input("b"));
  Tensor A({2, 3}), B({2});
  CHECK_THROWS_AS(g.evaluate(c, {{"a", &A}, {"b", &B}}), ShapeError);
}

TEST_CASE("matmul shape mismatch is a shape error") {
  Graph g;
  auto c = g.matmul(g.input("a"), g.input("b"));
  Tensor A({2, 3}), B({4, 2});
  CHECK_THROWS_AS(g.evaluate(c, {{"a", &A}, {"b", &B}}), ShapeError);
}

TEST_CASE("missing binding is an input error") {
  Graph g;
  auto c = g.exp(g.input("a"));
  CHECK_THROWS_AS(g.evaluate(c, {}), Error);
}

TEST_CASE("reshape infers one extent") {
  Graph g;
  auto r = g.reshape(g.input("a"), {0, 2});
  Tensor A({3, 4});
  CHECK(g.evaluate(r, {{"a", &A}}).shape() == ad::Shape{6, 2});
}

TEST_CASE("log of a negative value raises a numeric error") {
  Graph g;
  auto c = g.log(g.input("a"));
  Tensor A({1}, {-1.0});
  CHECK_THROWS_AS(g.evaluate(c, {{"a", &A}}), NumericError);
}

TEST_CASE("gradient of x*x + 3x is 2x + 3") {
  Graph g;
  auto x = g.input("x", true);
  auto y = g.sum_all(g.add(g.square(x), g.scale(x, 3.0)));
  Tensor X({3}, {1.0, -2.0, 0.5});
  g.evaluate(y, {{"x", &X}});
  const auto grads = g.gradients(y);
  CHECK(grads.at("x")[0] == doctest::Approx(5.0));
  CHECK(grads.at("x")[1] == doctest::Approx(-1.0));
  CHECK(grads.at("x")[2] == doctest::Approx(4.0));
}

TEST_CASE("gradient accumulates through a reused node") {
  Graph g;
  auto x = g.input("x", true);
  auto y = g.sum_all(g.mul(x, x));
  Tensor X({1}, {3.0});
  g.evaluate(y, {{"x", &X}});
  CHECK(g.gradients(y).at("x")[0] == doctest::Approx(6.0));
}

TEST_CASE("unreached trainable leaves get zero gradients") {
  Graph g;
  auto x = g.input("x", true);
  g.input("unused", true);
  auto y = g.sum_all(x);
  Tensor X({2}, {1.0, 2.0}), U({2}, {5.0, 6.0});
  g.evaluate(y, {{"x", &X}, {"unused", &U}});
  const auto grads = g.gradients(y);
  REQUIRE(grads.count("unused") == 1);
  CHECK(grads.at("unused")[0] == 0.0);
}

TEST_CASE("softmax is shift invariant and survives extreme logits") {
  Graph g;
  auto s = g.softmax(g.input("a"), 0);
  Tensor A({3}, {1000.0, 1001.0, -1000.0});
  const Tensor out = g.evaluate(s, {{"a", &A}});
  CHECK(out[0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
  CHECK(out[2] == 0.0);
}

TEST_CASE("dropout mask depends only on the seed") {
  Graph g;
  auto d = g.dropout(g.input("a"), 0.5);
  Tensor A({64}, 1.0);
  ad::EvalOptions on{true, 7, true};
  const Tensor first = g.evaluate(d, {{"a", &A}}, on);
  const Tensor again = g.evaluate(d, {{"a", &A}}, on);
  CHECK(std::equal(first.data().begin(), first.data().end(), again.data().begin()));
  ad::EvalOptions other{true, 8, true};
  const Tensor different = g.evaluate(d, {{"a", &A}}, other);
  CHECK_FALSE(std::equal(first.data().begin(), first.data().end(), different.data().begin()));
  const Tensor eval = g.evaluate(d, {{"a", &A}});
  CHECK(eval[0] == 1.0);
}

TEST_CASE("every primitive matches finite differences") {
  const auto r = checks::gradcheck_primitives(5, 11);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("adam: two steps match the reference recurrence") {
  ad::ParameterSet p{{"w", Tensor({2}, {1.0, -2.0})}};
  ad::Gradients g{{"w", Tensor({2}, {0.5, -0.25})}};
  ad::AdamState st;
  st.lr = 1e-3;
  ad::adam_step(p, g, st);
  ad::adam_step(p, g, st);
  CHECK(p.at("w")[0] == doctest::Approx(0.99800000004).epsilon(1e-12));
  CHECK(p.at("w")[1] == doctest::Approx(-1.99800000008).epsilon(1e-12));
}

TEST_CASE("adam: first step moves by lr times the sign") {
  ad::ParameterSet p{{"w", Tensor({1}, {0.0})}};
  ad::Gradients g{{"w", Tensor({1}, {1.0})}};
  ad::AdamState st;
  ad::adam_step(p, g, st);
  CHECK(p.at("w")[0] == doctest::Approx(-9.999999900000002e-05).epsilon(1e-14));
}

TEST_CASE("adam rejects a non-finite gradient without touching parameters") {
  ad::ParameterSet p{{"a", Tensor({1}, {1.0})}, {"b", Tensor({1}, {2.0})}};
  ad::Gradients g{{"a", Tensor({1}, {0.1})}, {"b", Tensor({1}, {std::nan("")})}};
  ad::AdamState st;
  CHECK_THROWS_AS(ad::adam_step(p, g, st), NumericError);
  CHECK(p.at("a")[0] == 1.0);
  CHECK(st.step_count == 0);
}

TEST_CASE("global norm clipping rescales to the limit") {
  ad::Gradients g{{"a", Tensor({2}, {3.0, 0.0})}, {"b", Tensor({1}, {4.0})}};
  CHECK(ad::global_norm(g) == doctest::Approx(5.0));
  ad::clip_global_norm(g, 1.0);
  CHECK(ad::global_norm(g) == doctest::Approx(1.0));
  CHECK(g.at("a")[0] == doctest::Approx(0.6));
}

TEST_CASE("checkpoint bytes are fixed") {
  ad::ParameterSet p{{"a", Tensor({2, 2}, {1, 2, 3, 4})}, {"b", Tensor::scalar(0.5)}};
  std::ostringstream out;
  ad::write_checkpoint(out, p);
  const std::string bytes = out.str();
  CHECK(bytes.size() == 86);
  CHECK(io::git_blob_sha1(bytes) == "5dacfb3cc31613dd8931e9d9016b4ed8ecb5c0ae");
  std::istringstream in(bytes);
  const auto back = ad::read_checkpoint(in);
  CHECK(back.at("a").shape() == ad::Shape{2, 2});
  CHECK(back.at("a")[3] == 4.0);
  CHECK(back.at("b").rank() == 0);
  CHECK(back.at("b").item() == 0.5);
}

TEST_CASE("checkpoint rejects bad magic, truncation and trailing bytes") {
  ad::ParameterSet p{{"a", Tensor({2}, {1, 2})}};
  std::ostringstream out;
  ad::write_checkpoint(out, p);
  const std::string good = out.str();
  std::string bad = good;
  bad[0] = 'X';
  std::istringstream s1(bad);
  CHECK_THROWS_AS(ad::read_checkpoint(s1), InputError);
  std::istringstream s2(good.substr(0, good.size() - 3));
  CHECK_THROWS_AS(ad::read_checkpoint(s2), InputError);
  std::istringstream s3(good + "z");
  CHECK_THROWS_AS(ad::read_checkpoint(s3), InputError);
}
