// Runs the full verification suite and the tooling check, printing one
// PASS/FAIL line per criterion. Exits nonzero when any criterion fails.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <sys/wait.h>

#include "parafreq/suite.hpp"

namespace fs = std::filesystem;
using namespace parafreq;

namespace {

const std::map<int, double> runtime_limit_seconds{{1, 5.0}, {2, 5.0}, {3, 10.0}, {4, 30.0}, {5, 20.0}, {8, 120.0}};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
            out[fs::relative(entry.path(), root).string()] = slurp(entry.path());
        }
    }
    return out;
}

struct Timed {
    int code;
    double seconds;
};

Timed run_verify(const fs::path& out) {
    const std::string cmd = std::string(PARAFREQ_CLI_PATH) + " verify --suite small --seed 42 --out " + out.string() +
                            " > " + (out.string() + ".log") + " 2>&1";
    const auto t0 = std::chrono::steady_clock::now();
    const int status = std::system(cmd.c_str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, secs};
}

void print_line(int id, bool pass, const std::string& title, const std::string& detail) {
    std::cout << "criterion " << id << " " << (pass ? "PASS" : "FAIL") << "  " << title;
    if (!detail.empty()) std::cout << "  (" << detail << ")";
    std::cout << "\n";
}

} // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "parafreq_acceptance";
    fs::remove_all(root);
    bool all = true;

    SuiteOptions opts;
    opts.size = SuiteSize::full;
    opts.seed = 42;
    opts.out_dir = root / "full";
    SuiteResult result;
    try {
        result = run_suite(opts);
    } catch (const std::exception& e) {
        std::cout << "suite error: " << e.what() << "\n";
        return 1;
    }

    for (const CriterionResult& c : result.criteria) {
        bool pass = c.pass();
        std::ostringstream detail;
        detail << c.rows.size() << " checks, " << format_number(c.seconds) << " s";
        const auto limit = runtime_limit_seconds.find(c.id);
        if (limit != runtime_limit_seconds.end() && c.seconds > limit->second) {
            pass = false;
            detail << " over the " << limit->second << " s limit";
        }
        print_line(c.id, pass, c.title, detail.str());
        for (const SuiteRow& r : c.rows) {
            if (!r.check.pass) {
                std::cout << "    " << r.scenario << " " << r.check.name << " worst " << format_number(r.check.worst_violation)
                          << " tol " << format_number(r.check.tolerance) << " " << r.check.note << "\n";
            }
        }
        all = all && pass;
    }

    const Timed first = run_verify(root / "small_a");
    const Timed second = run_verify(root / "small_b");
    bool identical = false;
    std::size_t files = 0;
    if (first.code == 0 && second.code == 0) {
        const auto a = csv_files(root / "small_a");
        const auto b = csv_files(root / "small_b");
        identical = !a.empty() && a == b;
        files = a.size();
    }
    const bool tooling = first.code == 0 && second.code == 0 && first.seconds <= 60.0 && identical;
    std::ostringstream detail;
    detail << "exit " << first.code << "/" << second.code << ", " << format_number(first.seconds) << " s, " << files
           << " csv files " << (identical ? "identical" : "differ");
    print_line(14, tooling, "verify --suite small --seed 42 is fast and reproducible", detail.str());
    all = all && tooling;

    std::cout << (all ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED") << "\n";
    return all ? 0 : 1;
}
