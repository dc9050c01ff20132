#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "kpcast/cli.hpp"
#include "kpcast/fetch.hpp"

using namespace kpcast;
namespace fs = std::filesystem;

namespace {

class LocalServer {
 public:
  LocalServer() {
    srv_.Get("/a.txt", [this](const httplib::Request&, httplib::Response& res) {
      ++hits_a;
      res.set_content("alpha", "text/plain");
    });
    srv_.Get("/bad.txt", [this](const httplib::Request&, httplib::Response& res) {
      ++hits_bad;
      res.set_content("corrupt", "text/plain");
    });
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~LocalServer() {
    srv_.stop();
    thread_.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

  std::atomic<int> hits_a{0}, hits_bad{0};

 private:
  httplib::Server srv_;
  int port_ = 0;
  std::thread thread_;
};

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::path(testing::TempDir()) / name;
  fs::remove_all(d);
  return d;
}

int run(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::vector<const char*> argv = {"kpcast"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST(Fetch, Sha256KnownVector) {
  EXPECT_EQ(fetch::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Fetch, ManifestParsing) {
  std::istringstream is(
      "# files\n"
      "http://h/x/data.txt\n"
      "https://h/y - renamed.bin\n");
  const auto m = fetch::parse_manifest(is);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].filename, "data.txt");
  EXPECT_TRUE(m[0].sha256.empty());
  EXPECT_EQ(m[1].filename, "renamed.bin");
  std::istringstream bad1("ftp://h/x\n"), bad2("http://h/x abc\n"), bad3("http://h/x - ../up\n");
  EXPECT_THROW(fetch::parse_manifest(bad1), Error);
  EXPECT_THROW(fetch::parse_manifest(bad2), Error);
  EXPECT_THROW(fetch::parse_manifest(bad3), Error);
}

TEST(Fetch, EmptyManifestWritesNothing) {
  const auto dir = fresh_dir("kpcast_fetch_empty");
  EXPECT_TRUE(fetch::fetch_all({}, dir).empty());
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Fetch, DownloadThenSkipCached) {
  LocalServer s;
  const auto dir = fresh_dir("kpcast_fetch_cache");
  const std::vector<fetch::ManifestEntry> m = {{s.url("/a.txt"), "", "a.txt"}};
  auto st = fetch::fetch_all(m, dir);
  ASSERT_EQ(st.size(), 1u);
  EXPECT_EQ(st[0].outcome, fetch::Outcome::Downloaded);
  EXPECT_EQ(*fetch::read_file(dir / "a.txt"), "alpha");
  EXPECT_EQ(fetch::read_checksums(dir).at("a.txt"), fetch::sha256_hex("alpha"));
  st = fetch::fetch_all(m, dir);
  EXPECT_EQ(st[0].outcome, fetch::Outcome::Skipped);
  EXPECT_EQ(s.hits_a.load(), 1);
  std::ofstream(dir / "a.txt") << "tampered";
  st = fetch::fetch_all(m, dir);
  EXPECT_EQ(st[0].outcome, fetch::Outcome::Downloaded);
  EXPECT_EQ(s.hits_a.load(), 2);
}

TEST(Fetch, BadChecksumRetriedThenFails) {
  LocalServer s;
  const auto dir = fresh_dir("kpcast_fetch_bad");
  fetch::FetchOptions opt;
  opt.attempts = 2;
  const std::vector<fetch::ManifestEntry> m = {{s.url("/bad.txt"), fetch::sha256_hex("expected"), "bad.txt"},
                                               {s.url("/missing"), "", "missing"}};
  const auto st = fetch::fetch_all(m, dir, opt);
  ASSERT_EQ(st.size(), 2u);
  EXPECT_EQ(st[0].outcome, fetch::Outcome::Failed);
  EXPECT_NE(st[0].message.find("checksum"), std::string::npos);
  EXPECT_EQ(s.hits_bad.load(), 2);
  EXPECT_FALSE(fs::exists(dir / "bad.txt"));
  EXPECT_EQ(st[1].outcome, fetch::Outcome::Failed);
  EXPECT_NE(st[1].message.find("404"), std::string::npos);
}

TEST(Fetch, CliExitCodes) {
  LocalServer s;
  const auto dir = fresh_dir("kpcast_fetch_cli");
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.txt") << s.url("/a.txt") << '\n';
  std::ofstream(dir / "ok.cfg") << "[fetch]\nmanifest = manifest.txt\nout_dir = dl\n";
  EXPECT_EQ(run({"--config", (dir / "ok.cfg").string(), "fetch"}), 0);
  EXPECT_TRUE(fs::exists(dir / "dl" / "a.txt"));
  std::ofstream(dir / "manifest_bad.txt") << s.url("/nothing-here") << '\n';
  std::ofstream(dir / "bad.cfg") << "[fetch]\nmanifest = manifest_bad.txt\nout_dir = dl\nattempts = 1\n";
  std::string err;
  EXPECT_EQ(run({"--config", (dir / "bad.cfg").string(), "fetch"}, nullptr, &err), 1);
  EXPECT_NE(err.find("missing"), std::string::npos);
}

TEST(Cli, HelpAndUsage) {
  std::string out;
  EXPECT_EQ(run({"--help"}, &out), 0);
  EXPECT_NE(out.find("forecast"), std::string::npos);
  EXPECT_EQ(run({"bogus"}), 2);
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"train", "--no-such-flag"}), 2);
}

TEST(Cli, MissingConfigIsValidationFailure) {
  std::string err;
  EXPECT_EQ(run({"train"}, nullptr, &err), 1);
  EXPECT_NE(err.find("config"), std::string::npos);
  EXPECT_EQ(run({"--config", "/nonexistent/x.cfg", "train"}, nullptr, &err), 1);
  EXPECT_NE(err.find("error [io]"), std::string::npos);
}
