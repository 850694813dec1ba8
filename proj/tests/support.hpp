#pragma once

#include "scopy/ingest.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace testing {

inline std::filesystem::path fixture_dir() { return SCOPY_FIXTURE_DIR; }

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline const scopy::ingest::CommitRef listing1_ref{"cvandeplas", "pystemon", "dbeb87afefdb63de2f4cff69b6f10c5965d14b54"};

inline scopy::ingest::CommitBundle listing1() {
    return scopy::ingest::FixtureCommitSource(fixture_dir()).fetch(listing1_ref);
}

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("scopy-test-" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
