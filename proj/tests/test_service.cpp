#include <filesystem>
#include <set>

#include "catch_amalgamated.hpp"

#include "advdist/service/http_server.hpp"

using namespace advdist;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::shared_ptr<const SearchPool> pool;
  std::map<InstanceId, ImageTensor> images;
  std::map<InstanceId, Label> truth;
};

// Ids 100.., confidences in (0.66, 0.98), one planted minimum adv_dist with
// confidence 0.9 so the first advdist query is known in advance.
Fixture make_fixture(std::size_t n = 40, std::uint64_t seed = 1) {
  Rng rng(seed);
  Fixture f;
  std::vector<EvalRecord> recs;
  std::vector<std::vector<double>> feats;
  for (std::size_t i = 0; i < n; ++i) {
    const InstanceId id = 100 + i;
    const double conf = i == 7 ? 0.9 : 0.66 + 0.32 * uniform01(rng);
    const double ad = i == 7 ? -5.0 : uniform01(rng) * 2 - 1;
    recs.push_back({id, conf, 1, ad});
    feats.push_back({uniform01(rng) * 3, uniform01(rng) * 3});
    f.images.emplace(id, ImageTensor::filled({4, 4, 1}, static_cast<float>(i) / static_cast<float>(n)));
    f.truth[id] = uniform01(rng) < 0.3 ? 0 : 1;
  }
  const double sigma = default_bandwidth(feats);
  f.pool = std::make_shared<const SearchPool>(SearchPool::make(std::move(recs), std::move(feats), sigma));
  return f;
}

const std::vector<std::string> kNames{"negative", "positive"};

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("advdist_service_" + name);
  fs::remove_all(p);
  return p;
}

// Labels every query from the truth table until the session reports done.
void drive(SessionManager& m, const std::string& id, const std::map<InstanceId, Label>& truth) {
  for (;;) {
    auto n = m.next(id);
    if (n.at("done").get<bool>()) return;
    const auto q = n.at("instance_id").get<InstanceId>();
    m.submit(id, q, truth.at(q));
  }
}

}  // namespace

TEST_CASE("sessions get distinct ids") {
  auto f = make_fixture();
  SessionManager m(f.pool, f.images, kNames);
  std::set<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.insert(m.create("random", 5, static_cast<std::uint64_t>(i)));
  CHECK(ids.size() == 50);
}

TEST_CASE("invalid session requests create nothing") {
  auto f = make_fixture();
  auto dir = scratch("invalid");
  SessionManager m(f.pool, f.images, kNames, dir.string());
  CHECK_THROWS_AS(m.create("foo", 10, 0), ValidationError);
  CHECK_THROWS_AS(m.create("random", 0, 0), ValidationError);
  CHECK_THROWS_AS(m.create("random", -3, 0), ValidationError);
  CHECK(fs::is_empty(dir));
  CHECK_THROWS_AS(m.next("nope"), LookupError);
  CHECK_THROWS_AS(m.summary("nope"), LookupError);
  fs::remove_all(dir);
}

TEST_CASE("manager construction checks names and images") {
  auto f = make_fixture();
  CHECK_THROWS_AS(SessionManager(f.pool, f.images, {"only"}), ValidationError);
  auto missing = f.images;
  missing.erase(missing.begin());
  CHECK_THROWS_AS(SessionManager(f.pool, missing, kNames), ValidationError);
}

TEST_CASE("a fresh advdist session proposes the lowest adv_dist and repeats it") {
  auto f = make_fixture();
  SessionManager m(f.pool, f.images, kNames);
  auto id = m.create("advdist", 10, 0);
  auto a = m.next(id), b = m.next(id);
  CHECK(a == b);
  CHECK(a.at("instance_id") == 107);
  CHECK(a.at("done") == false);
  CHECK(a.at("step") == 1);
  CHECK(a.at("predicted_class") == "positive");
  CHECK(a.at("image").at("format") == "pgm");
  CHECK(a.at("image").at("pixels").size() == 16);
}

TEST_CASE("labels update metrics: correct leaves errors, wrong at 0.9 gives sdr 10") {
  auto f = make_fixture();
  SessionManager m(f.pool, f.images, kNames);

  auto right = m.create("advdist", 5, 0);
  m.next(right);
  auto r = m.submit(right, 107, 1);
  CHECK(r.at("is_error") == false);
  CHECK(r.at("errors_found") == 0);
  CHECK(r.at("sdr").get<double>() == 0.0);

  auto wrong = m.create("advdist", 5, 0);
  m.next(wrong);
  auto w = m.submit(wrong, 107, 0);
  CHECK(w.at("is_error") == true);
  CHECK(w.at("errors_found") == 1);
  CHECK(w.at("sdr").get<double>() == Catch::Approx(10.0).epsilon(1e-12));
  CHECK(m.errors(wrong).at("errors").size() == 1);
  CHECK(m.errors(wrong).at("errors")[0].at("oracle_class") == "negative");
}

TEST_CASE("a non-pending label is a conflict and changes nothing") {
  auto f = make_fixture();
  SessionManager m(f.pool, f.images, kNames);
  auto id = m.create("random", 5, 3);
  CHECK_THROWS_AS(m.submit(id, 100, 1), ConflictError);  // nothing proposed yet
  const auto q = m.next(id).at("instance_id").get<InstanceId>();
  const auto before = m.summary(id);
  CHECK_THROWS_AS(m.submit(id, q == 100 ? 101 : 100, 1), ConflictError);
  CHECK_THROWS_AS(m.submit(id, q, 2), ValidationError);
  CHECK_THROWS_AS(m.submit(id, q, -1), ValidationError);
  CHECK(m.summary(id) == before);
  CHECK(m.next(id).at("instance_id") == q);
}

TEST_CASE("a session ends with a done marker after its budget") {
  auto f = make_fixture();
  SessionManager m(f.pool, f.images, kNames);
  auto id = m.create("bandit", 6, 2);
  for (int i = 0; i < 6; ++i) {
    auto n = m.next(id);
    REQUIRE(n.at("done") == false);
    auto q = n.at("instance_id").get<InstanceId>();
    auto r = m.submit(id, q, f.truth.at(q));
    CHECK(r.at("done") == (i == 5));
  }
  auto end = m.next(id);
  CHECK(end.at("done") == true);
  CHECK(end.at("queries_used") == 6);
  CHECK(end.at("trace").size() == 6);
}

TEST_CASE("managed sessions equal in-process searches for every strategy") {
  auto f = make_fixture(60, 9);
  SessionManager m(f.pool, f.images, kNames);
  FunctionOracle oracle([&](InstanceId id) { return f.truth.at(id); });
  for (auto s : all_strategies())
    for (std::uint64_t seed : {0ULL, 5ULL}) {
      auto id = m.create(to_string(s), 20, seed);
      drive(m, id, f.truth);
      auto expected = run_search(f.pool, s, oracle, 20, seed);
      CHECK(session_from_json(m.summary(id)) == expected);
    }
}

TEST_CASE("traces persist and restore into a new manager") {
  auto f = make_fixture();
  auto dir = scratch("restore");
  std::string id;
  json before;
  {
    SessionManager m(f.pool, f.images, kNames, dir.string());
    id = m.create("coverage", 12, 4);
    for (int i = 0; i < 5; ++i) {
      auto q = m.next(id).at("instance_id").get<InstanceId>();
      m.submit(id, q, f.truth.at(q));
    }
    m.next(id);  // pending at shutdown: lost
    before = m.summary(id);
    CHECK(fs::exists(dir / (id + ".json")));
    CHECK(read_session_trace((dir / (id + ".csv")).string()).queried.size() == 5);
  }
  SessionManager again(f.pool, f.images, kNames, dir.string());
  CHECK(again.restore() == 1);
  CHECK(again.summary(id) == before);
  drive(again, id, f.truth);
  FunctionOracle oracle([&](InstanceId q) { return f.truth.at(q); });
  CHECK(session_from_json(again.summary(id)) == run_search(f.pool, Strategy::coverage, oracle, 12, 4));
  fs::remove_all(dir);
}

TEST_CASE("the HTTP API maps errors to status codes") {
  auto f = make_fixture();
  SessionManager m(f.pool, f.images, kNames);
  SessionServer server(m);
  const int port = server.start();
  httplib::Client cli("127.0.0.1", port);

  auto caps = cli.Get("/api/capabilities");
  REQUIRE(caps);
  CHECK(caps->status == 200);
  CHECK(json::parse(caps->body).at("class_names") == json(kNames));
  CHECK(caps->get_header_value("Access-Control-Allow-Origin") == "*");

  auto bad = cli.Post("/api/sessions", R"({"strategy":"foo","budget":5})", "application/json");
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).at("code") == "validation");
  CHECK(cli.Post("/api/sessions", R"({"strategy":"random","budget":0})", "application/json")->status == 400);
  CHECK(cli.Post("/api/sessions", "not json", "application/json")->status == 400);
  CHECK(cli.Post("/api/sessions", R"({"strategy":"random"})", "application/json")->status == 400);
  CHECK(cli.Post("/api/sessions", R"({"strategy":"random","budget":"x"})", "application/json")->status == 400);

  auto created = cli.Post("/api/sessions", R"({"strategy":"advdist","budget":3,"seed":1})", "application/json");
  REQUIRE(created->status == 201);
  const auto id = json::parse(created->body).at("session_id").get<std::string>();

  auto missing = cli.Get("/api/sessions/zzz/next");
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body).at("code") == "not_found");
  CHECK(cli.Get("/api/nothing")->status == 404);

  auto n1 = cli.Get("/api/sessions/" + id + "/next");
  auto n2 = cli.Get("/api/sessions/" + id + "/next");
  CHECK(n1->status == 200);
  CHECK(n1->body == n2->body);

  auto conflict = cli.Post("/api/sessions/" + id + "/labels", R"({"instance_id":100,"label":1})", "application/json");
  CHECK(conflict->status == 409);
  CHECK(json::parse(conflict->body).at("code") == "conflict");
  auto range = cli.Post("/api/sessions/" + id + "/labels", R"({"instance_id":107,"label":7})", "application/json");
  CHECK(range->status == 400);
  auto ok = cli.Post("/api/sessions/" + id + "/labels", R"({"instance_id":107,"label":0})", "application/json");
  REQUIRE(ok->status == 200);
  CHECK(json::parse(ok->body).at("sdr").get<double>() == Catch::Approx(10.0));

  CHECK(cli.Get("/api/sessions/" + id + "/summary")->status == 200);
  CHECK(json::parse(cli.Get("/api/sessions/" + id + "/errors")->body).at("errors").size() == 1);

  auto pre = cli.Options("/api/sessions");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  server.stop();
}

TEST_CASE("sessions driven over HTTP equal in-process searches") {
  auto f = make_fixture(50, 3);
  SessionManager m(f.pool, f.images, kNames);
  SessionServer server(m);
  const int port = server.start();
  httplib::Client cli("127.0.0.1", port);
  FunctionOracle oracle([&](InstanceId id) { return f.truth.at(id); });
  for (auto s : all_strategies()) {
    const json req{{"strategy", to_string(s)}, {"budget", 15}, {"seed", 8}};
    auto created = cli.Post("/api/sessions", req.dump(), "application/json");
    REQUIRE(created->status == 201);
    const auto id = json::parse(created->body).at("session_id").get<std::string>();
    for (;;) {
      auto n = json::parse(cli.Get("/api/sessions/" + id + "/next")->body);
      if (n.at("done").get<bool>()) break;
      const auto q = n.at("instance_id").get<InstanceId>();
      const json label{{"instance_id", q}, {"label", f.truth.at(q)}};
      REQUIRE(cli.Post("/api/sessions/" + id + "/labels", label.dump(), "application/json")->status == 200);
    }
    auto summary = json::parse(cli.Get("/api/sessions/" + id + "/summary")->body);
    CHECK(session_from_json(summary) == run_search(f.pool, s, oracle, 15, 8));
  }
  server.stop();
}

TEST_CASE("base64 and image payloads") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  auto pnm = render_pnm(ImageTensor::filled({1, 2, 1}, 1.0f));
  CHECK(pnm == std::string("P5\n2 1\n255\n\xff\xff", 13));
  auto color = image_payload(ImageTensor::filled({1, 1, 3}, 0.0f));
  CHECK(color.at("format") == "ppm");
}
