#pragma once

// Needs OpenSSL (libcrypto, plus libssl for https) and a threads library at link time.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "httplib.h"
#include "kpcast/error.hpp"
#include "kpcast/ingest.hpp"

namespace kpcast::fetch {

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::Io, "SHA-256 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::optional<std::string> read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) return std::nullopt;
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct ManifestEntry {
  std::string url;
  std::string sha256;  // empty: not pinned
  std::string filename;
};

inline std::string default_filename(const std::string& url) {
  auto path = url.substr(0, url.find_first_of("?#"));
  const auto slash = path.find_last_of('/');
  auto name = slash == std::string::npos ? path : path.substr(slash + 1);
  return name.empty() ? "index.html" : name;
}

/// One entry per line: `url [sha256|-] [filename]`. '#' starts a comment line.
inline std::vector<ManifestEntry> parse_manifest(std::istream& is) {
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (ingest::is_skippable(line)) continue;
    const auto f = ingest::split_fields(line, ingest::Delimiter::Whitespace);
    if (f.size() > 3) fail(ErrorKind::Parse, "manifest line " + std::to_string(lineno) + ": too many fields");
    ManifestEntry e;
    e.url = f[0];
    if (e.url.rfind("http://", 0) != 0 && e.url.rfind("https://", 0) != 0)
      fail(ErrorKind::Parse, "manifest line " + std::to_string(lineno) + ": not an http(s) URL");
    if (f.size() > 1 && f[1] != "-") {
      e.sha256 = f[1];
      if (e.sha256.size() != 64 || e.sha256.find_first_not_of("0123456789abcdef") != std::string::npos)
        fail(ErrorKind::Parse, "manifest line " + std::to_string(lineno) + ": checksum must be 64 lowercase hex digits");
    }
    e.filename = f.size() > 2 ? f[2] : default_filename(e.url);
    if (e.filename.find('/') != std::string::npos || e.filename == ".." || e.filename == ".")
      fail(ErrorKind::Parse, "manifest line " + std::to_string(lineno) + ": file name must not contain '/'");
    out.push_back(e);
  }
  return out;
}

/// Returns the body on success; on failure leaves a message in `err`.
using Getter = std::function<std::optional<std::string>(const std::string& url, std::string& err)>;

inline std::optional<std::string> http_get(const std::string& url, std::string& err, int timeout_sec = 30) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client cli(origin);
  if (!cli.is_valid()) {
    err = "unsupported URL " + url;
    return std::nullopt;
  }
  cli.set_follow_location(true);
  cli.set_connection_timeout(timeout_sec, 0);
  cli.set_read_timeout(timeout_sec, 0);
  auto res = cli.Get(path);
  if (!res) {
    err = "request failed: " + httplib::to_string(res.error());
    return std::nullopt;
  }
  if (res->status != 200) {
    err = "HTTP status " + std::to_string(res->status);
    return std::nullopt;
  }
  return res->body;
}

enum class Outcome { Downloaded, Skipped, Failed };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Downloaded:
      return "downloaded";
    case Outcome::Skipped:
      return "skipped";
    case Outcome::Failed:
      return "failed";
  }
  return "?";
}

struct FetchStatus {
  std::string filename;
  Outcome outcome = Outcome::Failed;
  std::string sha256;
  int attempts = 0;
  std::string message;
};

struct FetchOptions {
  int attempts = 3;
  int timeout_sec = 30;
};

inline constexpr const char* kChecksumFile = "SHA256SUMS";

/// "hex  name" lines, as written by sha256sum.
inline std::map<std::string, std::string> read_checksums(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  std::ifstream is(dir / kChecksumFile);
  std::string line;
  while (std::getline(is, line)) {
    const auto f = ingest::split_fields(line, ingest::Delimiter::Whitespace);
    if (f.size() == 2) out[f[1]] = f[0];
  }
  return out;
}

inline void write_checksums(const std::filesystem::path& dir, const std::map<std::string, std::string>& sums) {
  std::ofstream os(dir / kChecksumFile, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + (dir / kChecksumFile).string());
  for (const auto& [name, hex] : sums) os << hex << "  " << name << '\n';
}

/// Downloads each entry into `out_dir`. A file is skipped when its content already matches the
/// pinned checksum (or, when unpinned, the one recorded by an earlier run). A download whose
/// checksum disagrees with the pin is retried and finally reported as failed; the bad body is
/// never left in place.
inline std::vector<FetchStatus> fetch_all(const std::vector<ManifestEntry>& entries, const std::filesystem::path& out_dir,
                                          const FetchOptions& opt = {}, Getter get = {}) {
  if (!get) get = [&opt](const std::string& url, std::string& err) { return http_get(url, err, opt.timeout_sec); };
  std::vector<FetchStatus> out;
  if (entries.empty()) return out;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) fail(ErrorKind::Io, "cannot create " + out_dir.string());
  auto sums = read_checksums(out_dir);
  for (const auto& e : entries) {
    FetchStatus st;
    st.filename = e.filename;
    const auto target = out_dir / e.filename;
    const std::string want = !e.sha256.empty() ? e.sha256 : (sums.count(e.filename) ? sums[e.filename] : "");
    if (auto existing = read_file(target); existing && !want.empty() && sha256_hex(*existing) == want) {
      st.outcome = Outcome::Skipped;
      st.sha256 = want;
      sums[e.filename] = want;
      out.push_back(st);
      continue;
    }
    for (st.attempts = 1; st.attempts <= opt.attempts; ++st.attempts) {
      std::string err;
      const auto body = get(e.url, err);
      if (!body) {
        st.message = err;
        continue;
      }
      const auto hex = sha256_hex(*body);
      if (!e.sha256.empty() && hex != e.sha256) {
        st.message = "checksum mismatch: got " + hex;
        continue;
      }
      const auto part = out_dir / (e.filename + ".part");
      {
        std::ofstream os(part, std::ios::binary);
        os << *body;
        if (!os) fail(ErrorKind::Io, "cannot write " + part.string());
      }
      std::filesystem::rename(part, target);
      st.outcome = Outcome::Downloaded;
      st.sha256 = hex;
      st.message.clear();
      sums[e.filename] = hex;
      break;
    }
    if (st.outcome != Outcome::Downloaded) st.attempts = opt.attempts;
    out.push_back(st);
  }
  write_checksums(out_dir, sums);
  return out;
}

}  // namespace kpcast::fetch
