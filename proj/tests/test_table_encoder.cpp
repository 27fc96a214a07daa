#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "msum/table_encoder.hpp"

using namespace msum;

namespace {

// Independent place-value oracle: reconstruct the scalar from digits.
double reconstruct(const std::vector<int>& digits, int highest_power) {
  double v = 0.0;
  for (size_t i = 0; i < digits.size(); ++i)
    v += digits[i] * std::pow(2.0, highest_power - static_cast<int>(i));
  return v;
}

Vocab word_vocab() {
  Vocab v;
  for (const char* w : {"true", "false", "wifi", "category", "bistro", "name"})
    v.add_word(w);
  return v;
}

}  // namespace

TEST_CASE("rating binary encoding hand cases") {
  REQUIRE(encode_rating_binary(4.5) == std::vector<int>{1, 0, 0, 1});
  REQUIRE(encode_rating_binary(0.0) == std::vector<int>{0, 0, 0, 0});
  REQUIRE(encode_rating_binary(2.5) == std::vector<int>{0, 1, 0, 1});
  REQUIRE_THROWS_AS(encode_rating_binary(8.0), CorpusError);
}

TEST_CASE("price binary encoding hand cases") {
  auto d = encode_price_binary(19.99);  // rounds to 20 = 2^4 + 2^2
  REQUIRE(d.size() == 11);
  REQUIRE(reconstruct(d, 9) == 20.0);
  REQUIRE(d[9 - 4] == 1);
  REQUIRE(d[9 - 2] == 1);

  auto half = encode_price_binary(0.5);
  REQUIRE(reconstruct(half, 9) == 0.5);
  REQUIRE(half.back() == 1);
  REQUIRE(std::count(half.begin(), half.end(), 1) == 1);

  auto all = encode_price_binary(1023.5);
  REQUIRE(std::count(all.begin(), all.end(), 1) == 11);
  REQUIRE_THROWS_AS(encode_price_binary(1024.0), CorpusError);
}

TEST_CASE("binary encodings reconstruct exhaustively over the 0.5 grid") {
  for (int i = 0; i <= 15; ++i) {
    double x = i * 0.5;
    REQUIRE(reconstruct(encode_rating_binary(x), 2) == x);
  }
  for (int i = 0; i <= 2047; ++i) {
    double x = i * 0.5;
    REQUIRE(reconstruct(encode_price_binary(x), 9) == x);
  }
}

TEST_CASE("rounding to nearest 0.5 with halves away from zero") {
  REQUIRE(round_half(0.24) == 0.0);
  REQUIRE(round_half(0.25) == 0.5);
  REQUIRE(round_half(0.75) == 1.0);
  REQUIRE(reconstruct(encode_rating_binary(4.4), 2) == 4.5);
  REQUIRE(reconstruct(encode_rating_binary(4.2), 2) == 4.0);
}

TEST_CASE("hour cluster assignment") {
  REQUIRE(assign_hour_cluster(16.5, 23.2) == 0);
  REQUIRE(assign_hour_cluster(6.4, 23.0) == 2);
  // Nearest to (8.7, 17.1): distance ~0.316 beats all others.
  REQUIRE(assign_hour_cluster(9.0, 17.0) == 1);
  REQUIRE(assign_hour_cluster(8.7, 17.1) == 1);
  REQUIRE(assign_hour_cluster(10.6, 22.6) == 3);
}

TEST_CASE("field value embeddings") {
  std::mt19937_64 rng(5);
  const int e = 4;
  auto vocab = word_vocab();
  auto params = TableParams::init(e, e, vocab.size(), {"c1", "c2"}, rng);
  auto token_emb =
      make_param(test::randn(static_cast<Eigen::Index>(vocab.size()), e, rng));
  Tape tape;

  SECTION("numeric zero gives the zero vector") {
    FieldValue v;
    v.kind = FieldKind::Numeric;
    v.number = 0.0;
    auto out = embed_field_value(tape, v, params, token_emb, vocab);
    REQUIRE(out->value.isZero(0.0));
  }
  SECTION("binary true equals nominal 'true'") {
    FieldValue b;
    b.kind = FieldKind::Binary;
    b.flag = true;
    FieldValue n;
    n.kind = FieldKind::Nominal;
    n.text = "true";
    auto vb = embed_field_value(tape, b, params, token_emb, vocab);
    auto vn = embed_field_value(tape, n, params, token_emb, vocab);
    REQUIRE(vb->value == vn->value);
  }
  SECTION("categorical mean of two categories") {
    FieldValue v;
    v.kind = FieldKind::Categorical;
    v.categories = {"c1", "c2"};
    auto out = embed_field_value(tape, v, params, token_emb, vocab);
    Mat expect =
        0.5 * (params.cat_emb->value.row(0) + params.cat_emb->value.row(1));
    REQUIRE((out->value - expect).norm() < 1e-12);
  }
  SECTION("unknown category errors") {
    FieldValue v;
    v.kind = FieldKind::Categorical;
    v.categories = {"nope"};
    REQUIRE_THROWS_WITH(embed_field_value(tape, v, params, token_emb, vocab),
                        Catch::Matchers::ContainsSubstring("nope"));
  }
  SECTION("hours map to the centroid embedding") {
    FieldValue v;
    v.kind = FieldKind::Hours;
    v.hours = {9.0, 17.0};
    auto out = embed_field_value(tape, v, params, token_emb, vocab);
    REQUIRE(out->value == Mat(params.hour_emb->value.row(1)));
  }
  SECTION("numeric sums the set place embeddings") {
    FieldValue v;
    v.kind = FieldKind::Numeric;
    v.number = 2.5;  // 2^1 + 2^-1: place rows for powers 1 and -1
    auto out = embed_field_value(tape, v, params, token_emb, vocab);
    Mat expect = params.place_emb->value.row(9 - 1) +
                 params.place_emb->value.row(9 + 1);
    REQUIRE((out->value - expect).norm() < 1e-12);
  }
}

TEST_CASE("encode_table structure") {
  std::mt19937_64 rng(6);
  const int e = 4, ed = 4;
  auto vocab = word_vocab();
  auto params = TableParams::init(e, ed, vocab.size(), {}, rng);
  auto token_emb =
      make_param(test::randn(static_cast<Eigen::Index>(vocab.size()), e, rng));

  TableData table;
  TableField f1{"wifi", {}};
  f1.value.kind = FieldKind::Binary;
  f1.value.flag = true;
  TableField f2{"category", {}};
  f2.value.kind = FieldKind::Nominal;
  f2.value.text = "bistro";
  table.fields = {f1, f2};

  SECTION("zero W_f and b_f give a zero table encoding") {
    params.w_f->value.setZero();
    params.b_f->value.setZero();
    Tape tape;
    auto h = encode_table(tape, table, params, token_emb, vocab);
    REQUIRE(h->value.isZero(0.0));
  }
  SECTION("single field gives a single row") {
    TableData one;
    one.fields = {f1};
    Tape tape;
    auto h = encode_table(tape, one, params, token_emb, vocab);
    REQUIRE(h->value.rows() == 1);
    REQUIRE(h->value.cols() == ed);
  }
  SECTION("empty table and overlong table error") {
    Tape tape;
    REQUIRE_THROWS_AS(encode_table(tape, TableData{}, params, token_emb, vocab),
                      CorpusError);
    REQUIRE_THROWS_AS(
        encode_table(tape, table, params, token_emb, vocab, /*max_fields=*/1),
        CorpusError);
  }
  SECTION("permuting fields permutes rows identically") {
    TableData swapped;
    swapped.fields = {f2, f1};
    Tape tape;
    auto h1 = encode_table(tape, table, params, token_emb, vocab);
    auto h2 = encode_table(tape, swapped, params, token_emb, vocab);
    REQUIRE((h1->value.row(0) - h2->value.row(1)).norm() == 0.0);
    REQUIRE((h1->value.row(1) - h2->value.row(0)).norm() == 0.0);
  }
}

TEST_CASE("encode_table matches a hand-computed 2x2 case") {
  // e_T = e_D = 2, one nominal field with single-token name and value.
  Vocab vocab;
  int name_id = vocab.add_word("name");
  int val_id = vocab.add_word("val");
  auto token_emb = make_param(Mat::Zero(static_cast<Eigen::Index>(vocab.size()), 2));
  token_emb->value.row(name_id) << 1.0, 2.0;   // n_k
  token_emb->value.row(val_id) << -1.0, 0.5;   // v_k

  std::mt19937_64 rng(1);
  auto params = TableParams::init(2, 2, vocab.size(), {}, rng);
  params.w_f->value << 1, 0, 0, 1, 1, -1, 0, 2;  // 4x2
  params.b_f->value << 0.5, -4.0;
  params.w_table->value << 2, 0, 1, 1;

  // [n; v] = (1, 2, -1, 0.5): pre-act = (1*1+2*0+(-1)*1+0.5*0 + 0.5,
  //                                      1*0+2*1+(-1)*(-1)+0.5*2 - 4) = (0.5, 0)
  // f = ReLU = (0.5, 0); h = f W_table = (1.0, 0.0)
  TableData table;
  TableField f{"name", {}};
  f.value.kind = FieldKind::Nominal;
  f.value.text = "val";
  table.fields = {f};
  Tape tape;
  auto h = encode_table(tape, table, params, token_emb, vocab);
  REQUIRE(h->value(0, 0) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(h->value(0, 1) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("encode_table gradients match finite differences") {
  std::mt19937_64 rng(8);
  const int e = 3, ed = 3;
  Vocab vocab = word_vocab();
  auto params = TableParams::init(e, ed, vocab.size(), {"c1"}, rng, 0.5, 0.3);

  TableData table;
  TableField f1{"wifi", {}};
  f1.value.kind = FieldKind::Numeric;
  f1.value.number = 2.5;
  TableField f2{"category", {}};
  f2.value.kind = FieldKind::Categorical;
  f2.value.categories = {"c1"};
  TableField f3{"name", {}};
  f3.value.kind = FieldKind::Hours;
  f3.value.hours = {9.0, 17.0};
  table.fields = {f1, f2, f3};

  auto build = [&](Tape& t) {
    auto h = encode_table(t, table, params, params.tok_emb, vocab);
    return t.sum_all(t.cmul(h, h));
  };
  REQUIRE(test::fd_gradient_check(build, params.named_params()) < 1e-4);
}
