#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdlift/mtdlift.h"
#include "test_paths.hpp"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  mtdl_string_free(s);
  return out;
}

mtdl_dataset* generated(const char* preset, std::size_t n, std::uint64_t seed) {
  char* spec = nullptr;
  REQUIRE(mtdl_preset_spec(preset, &spec) == MTDL_OK);
  auto doc = nlohmann::json::parse(take(spec));
  doc["n"] = n;
  doc["seed"] = seed;
  mtdl_dataset* d = nullptr;
  char* report = nullptr;
  REQUIRE(mtdl_dataset_generate(doc.dump().c_str(), &d, &report) == MTDL_OK);
  CHECK(nlohmann::json::parse(take(report)).is_object());
  return d;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::strcmp(mtdl_status_name(MTDL_OK), "ok") == 0);
  CHECK(std::strcmp(mtdl_status_name(MTDL_ERR_CALIBRATION), "calibration") == 0);
  CHECK(std::strcmp(mtdl_status_name(MTDL_ERR_INVALID_ARGUMENT), "invalid_argument") == 0);
  CHECK(std::strlen(mtdl_version()) > 0);
  mtdl_dataset_free(nullptr);
  mtdl_model_free(nullptr);
}

TEST_CASE("dataset handles") {
  mtdl_dataset* d = nullptr;
  REQUIRE(mtdl_dataset_load(test_data("golden3.tsv").c_str(), &d) == MTDL_OK);
  CHECK(mtdl_dataset_size(d) == 3);
  std::size_t c = 0, k = 0, s = 0;
  CHECK(mtdl_dataset_dims(d, &c, &k, &s) == MTDL_OK);
  CHECK(c == 3);
  CHECK(k == 4);
  CHECK(s == 3);
  const char* id = nullptr;
  int treated = -1, outcome = -1, has = -1;
  CHECK(mtdl_dataset_sample(d, 1, &id, &treated, &outcome, &has, nullptr) == MTDL_OK);
  CHECK(std::string(id) == "b2");
  CHECK(treated == 1);
  CHECK(outcome == 1);
  CHECK(has == 0);
  CHECK(mtdl_dataset_sample(d, 3, &id, &treated, &outcome, nullptr, nullptr) == MTDL_ERR_INVALID_ARGUMENT);

  mtdl_dataset* b = nullptr;
  CHECK(mtdl_dataset_binarize(d, "Personnel", nullptr, &b) == MTDL_OK);
  std::size_t bk = 0;
  mtdl_dataset_dims(b, nullptr, &bk, nullptr);
  CHECK(bk == 1);
  mtdl_dataset* bad = nullptr;
  CHECK(mtdl_dataset_binarize(d, "finance", nullptr, &bad) != MTDL_OK);
  CHECK(bad == nullptr);
  CHECK(mtdl_dataset_binarize(d, "basic", "{\"groups\": [\"PERSONNEL\"]}", &bad) == MTDL_ERR_TAXONOMY);
  CHECK(mtdl_dataset_binarize(d, "basic", "{oops", &bad) == MTDL_ERR_PARSE);

  mtdl_dataset *tr = nullptr, *te = nullptr;
  CHECK(mtdl_dataset_split(d, 0.7, 1, &tr, &te) == MTDL_OK);
  CHECK(mtdl_dataset_size(tr) + mtdl_dataset_size(te) == 3);
  mtdl_dataset_free(tr);
  mtdl_dataset_free(te);
  mtdl_dataset_free(b);
  mtdl_dataset_free(d);

  CHECK(mtdl_dataset_load("/nonexistent/file.tsv", &d) == MTDL_ERR_IO);
  CHECK(std::strlen(mtdl_last_error()) > 0);
  CHECK(mtdl_dataset_load(nullptr, &d) == MTDL_ERR_INVALID_ARGUMENT);
}

TEST_CASE("generate, train, predict and score through the C interface") {
  mtdl_dataset* raw = generated("linear-rct", 6000, 0);
  mtdl_dataset *train = nullptr, *test = nullptr;
  REQUIRE(mtdl_dataset_split(raw, 0.7, 3, &train, &test) == MTDL_OK);

  mtdl_model* m = nullptr;
  REQUIRE(mtdl_model_train(train, "tlearner", "{\"base_learner\": \"logistic\"}", &m, nullptr) == MTDL_OK);
  CHECK(std::string(mtdl_model_kind(m)) == "tlearner");
  const std::size_t n = mtdl_dataset_size(test);
  std::vector<double> ite(n), pc(n), pt(n);
  REQUIRE(mtdl_model_predict_ite(m, test, ite.data(), n) == MTDL_OK);
  REQUIRE(mtdl_model_predict(m, test, pc.data(), pt.data(), n) == MTDL_OK);
  for (std::size_t i = 0; i < n; ++i) CHECK(ite[i] == pt[i] - pc[i]);
  CHECK(mtdl_model_predict_ite(m, test, ite.data(), n + 1) == MTDL_ERR_INVALID_ARGUMENT);

  std::vector<int> treated(n), outcome(n);
  std::vector<double> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    int has = 0;
    mtdl_dataset_sample(test, i, nullptr, &treated[i], &outcome[i], &has, &truth[i]);
  }
  double rho = 0, p = 1;
  CHECK(mtdl_spearman(ite.data(), truth.data(), n, &rho, &p) == MTDL_OK);
  CHECK(rho > 0.8);
  double q = 0;
  CHECK(mtdl_metric("qini", ite.data(), treated.data(), outcome.data(), n, 0.3, &q) == MTDL_OK);
  CHECK(q > 0.0);
  CHECK(mtdl_metric("gini", ite.data(), treated.data(), outcome.data(), n, 0.3, &q) == MTDL_ERR_INVALID_ARGUMENT);

  char* csv = nullptr;
  CHECK(mtdl_curve_export("uplift", "csv", nullptr, ite.data(), treated.data(), outcome.data(), n, &csv) == MTDL_OK);
  CHECK(take(csv).rfind("fraction,gain\n", 0) == 0);

  const std::string path = std::string(MTDLIFT_TEST_TMP) + "/capi_model.ckpt";
  CHECK(mtdl_model_save(m, path.c_str()) == MTDL_OK);
  mtdl_model* back = nullptr;
  REQUIRE(mtdl_model_load(path.c_str(), &back) == MTDL_OK);
  std::vector<double> ite2(n);
  mtdl_model_predict_ite(back, test, ite2.data(), n);
  CHECK(ite2 == ite);

  mtdl_model* none = nullptr;
  CHECK(mtdl_model_train(train, "mtdnet", "{\"epochs\": 0}", &none, nullptr) != MTDL_OK);
  CHECK(mtdl_model_train(train, "mtdnet", "{\"epoch\": 3}", &none, nullptr) == MTDL_ERR_SCHEMA);
  CHECK(mtdl_model_train(train, "forest", nullptr, &none, nullptr) == MTDL_ERR_INVALID_ARGUMENT);

  mtdl_model_free(back);
  mtdl_model_free(m);
  mtdl_dataset_free(train);
  mtdl_dataset_free(test);
  mtdl_dataset_free(raw);
}

TEST_CASE("metric degenerate cases map to status codes") {
  const double scores[] = {0.9, 0.1, 0.2};
  const int treated[] = {1, 0, 0};
  const int outcome[] = {1, 0, 1};
  double v = 0;
  CHECK(mtdl_metric("uplift_at_k", scores, treated, outcome, 3, 0.3, &v) == MTDL_ERR_DEGENERATE);
  const int all_t[] = {1, 1, 1};
  CHECK(mtdl_metric("qini", scores, all_t, outcome, 3, 0.3, &v) == MTDL_ERR_DEGENERATE);
  CHECK(mtdl_metric("average_uplift", scores, treated, outcome, 3, 0.3, &v) == MTDL_OK);
  CHECK(v == 0.5);
}
