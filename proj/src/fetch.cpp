#include "epf/fetch.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <memory>

#include <curl/curl.h>
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "epf/error.hpp"
#include "epf/hash.hpp"
#include "epf/keyvalue.hpp"

#ifndef EPF_SOURCE_DIR
#define EPF_SOURCE_DIR "."
#endif

namespace epf::data {
namespace {

constexpr std::array<const char*, 5> kMarkets = {"NP", "PJM", "BE", "FR", "DE"};

class FileLock {
public:
    explicit FileLock(const std::filesystem::path& path)
        : fd_(::open(path.c_str(), O_CREAT | O_RDWR, 0644)) {
        if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) {
            throw DataError("cannot lock " + path.string());
        }
    }
    ~FileLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_;
};

bool cached_copy_valid(const std::filesystem::path& path, const ManifestEntry& entry) {
    if (!std::filesystem::exists(path) || std::filesystem::file_size(path) == 0) {
        return false;
    }
    return entry.sha256.empty() || sha256_file(path) == entry.sha256;
}

std::size_t write_to_file(char* data, std::size_t size, std::size_t count, void* user) {
    return std::fwrite(data, size, count, static_cast<std::FILE*>(user)) * size;
}

}  // namespace

Manifest parse_manifest(const std::map<std::string, std::string>& key_values) {
    Manifest manifest;
    for (const auto& [key, value] : key_values) {
        const auto dot = key.rfind('.');
        if (dot == std::string::npos) {
            throw ConfigError("manifest key '" + key + "' must look like <market>.url");
        }
        const std::string market = key.substr(0, dot);
        const std::string field = key.substr(dot + 1);
        if (field == "url") {
            manifest[market].url = value;
        } else if (field == "sha256") {
            manifest[market].sha256 = value;
        } else {
            throw ConfigError("unknown manifest field '" + field + "'");
        }
    }
    return manifest;
}

Manifest load_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_key_values(path));
}

std::filesystem::path default_manifest_path() {
    return std::filesystem::path(EPF_SOURCE_DIR) / "data" / "manifest.txt";
}

std::filesystem::path default_cache_dir() {
    if (const char* env = std::getenv("EPF_CACHE_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') {
        return std::filesystem::path(home) / ".cache" / "epf";
    }
    return std::filesystem::temp_directory_path() / "epf-cache";
}

bool is_benchmark_market(const std::string& market_id) {
    for (const char* m : kMarkets) {
        if (market_id == m) {
            return true;
        }
    }
    return false;
}

Transport curl_transport() {
    return [](const std::string& url, const std::filesystem::path& destination) -> long {
        std::unique_ptr<std::FILE, decltype(&std::fclose)> file(
            std::fopen(destination.c_str(), "wb"), &std::fclose);
        if (!file) {
            throw DataError("cannot write " + destination.string());
        }
        std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(),
                                                                 &curl_easy_cleanup);
        if (!curl) {
            throw TransportError(url, 0, "curl initialization failed");
        }
        curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
        curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
        curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, &write_to_file);
        curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, file.get());
        curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 30L);
        const CURLcode rc = curl_easy_perform(curl.get());
        if (rc != CURLE_OK) {
            throw TransportError(url, 0, curl_easy_strerror(rc));
        }
        long status = 0;
        curl_easy_getinfo(curl.get(), CURLINFO_RESPONSE_CODE, &status);
        return status;
    };
}

std::filesystem::path fetch_dataset(const std::string& market_id,
                                    const std::filesystem::path& cache_dir,
                                    const Manifest& manifest, const Transport& transport) {
    if (!is_benchmark_market(market_id)) {
        throw ConfigError("unknown market '" + market_id + "' (expected NP, PJM, BE, FR or DE)");
    }
    const auto entry = manifest.find(market_id);
    if (entry == manifest.end() || entry->second.url.empty()) {
        throw ConfigError("manifest has no URL for market " + market_id);
    }
    const auto target = cache_dir / (market_id + ".csv");
    if (cached_copy_valid(target, entry->second)) {
        return target;
    }

    std::filesystem::create_directories(cache_dir);
    FileLock lock(cache_dir / ".fetch.lock");
    if (cached_copy_valid(target, entry->second)) {
        return target;
    }
    const auto partial = cache_dir / (market_id + ".csv.part");
    const std::string& url = entry->second.url;
    const long status = transport(url, partial);
    if (status != 200) {
        std::filesystem::remove(partial);
        throw TransportError(url, status, "unexpected HTTP status");
    }
    if (!entry->second.sha256.empty()) {
        const std::string digest = sha256_file(partial);
        if (digest != entry->second.sha256) {
            std::filesystem::remove(partial);
            throw TransportError(url, status, "checksum mismatch (got " + digest + ")");
        }
    }
    std::filesystem::rename(partial, target);
    return target;
}

}  // namespace epf::data
