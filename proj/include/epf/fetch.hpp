#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>

namespace epf::data {

struct ManifestEntry {
    std::string url;
    std::string sha256;  // empty: not verified
};

using Manifest = std::map<std::string, ManifestEntry>;

/// Manifest lines look like `NP.url=...` and `NP.sha256=...`.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::map<std::string, std::string>& key_values);

/// Manifest shipped with the sources (data/manifest.txt).
std::filesystem::path default_manifest_path();

/// EPF_CACHE_DIR if set, otherwise $HOME/.cache/epf.
std::filesystem::path default_cache_dir();

bool is_benchmark_market(const std::string& market_id);

/// Downloads `url` into `destination`; returns the HTTP status (0 when the
/// request never reached a server).
using Transport = std::function<long(const std::string& url,
                                     const std::filesystem::path& destination)>;

Transport curl_transport();

/// Path of the cached `<market>.csv`, downloading it on first use. Concurrent
/// callers on the same cache directory are serialized by a lock file.
std::filesystem::path fetch_dataset(const std::string& market_id,
                                    const std::filesystem::path& cache_dir,
                                    const Manifest& manifest,
                                    const Transport& transport = curl_transport());

}  // namespace epf::data
