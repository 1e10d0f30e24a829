// parafreq command line: run a scenario, run the verification suite, or dump a spectrum.

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "parafreq/suite.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parafreq::Error(parafreq::ErrorKind::io, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, double> parse_overrides(const std::vector<std::string>& items) {
    std::map<std::string, double> out;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw parafreq::Error(parafreq::ErrorKind::validation, "override '" + item + "' is not NAME=VALUE");
        }
        double value = 0.0;
        const std::string text = item.substr(eq + 1);
        const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
        if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
            throw parafreq::Error(parafreq::ErrorKind::validation, "override '" + item + "' has a bad value");
        }
        out[item.substr(0, eq)] = value;
    }
    return out;
}

int cmd_run(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed,
            const std::string& format) {
    const parafreq::Scenario s = parafreq::parse_config(read_file(config), seed);
    const parafreq::Report r = parafreq::run_and_write(s, out_dir);
    std::cout << parafreq::emit_report(r, format == "json" ? parafreq::ReportFormat::json : parafreq::ReportFormat::text);
    return r.pass() ? 0 : 1;
}

int cmd_spectrum(const std::string& config, const std::string& out_path) {
    const parafreq::Scenario s = parafreq::parse_config(read_file(config));
    const parafreq::WeightedDomain d = parafreq::build_domain(s.domain);
    const parafreq::Spectrum spec = parafreq::eigendecompose(d);
    const std::string csv = parafreq::spectrum_csv(spec);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        parafreq::write_text_file(out_path, csv);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frequency-functional verification for parabolic flows on weighted graphs"};
    app.set_version_flag("--version", std::string("parafreq ") + parafreq::version);
    app.require_subcommand(1);

    std::string config, out_dir = "out", format = "text";
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "Run one scenario from a JSON config");
    run->add_option("--config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory")->required();
    auto* run_seed = run->add_option("--seed", seed, "Master seed (overrides the config)");
    run->add_option("--format", format, "Report format on stdout")->check(CLI::IsMember({"text", "json"}));

    std::string suite = "small", verify_out = "verify-out";
    std::uint64_t verify_seed = 42;
    std::vector<std::string> overrides;
    unsigned jobs = 1;
    auto* verify = app.add_subcommand("verify", "Run the canned verification suite");
    verify->add_option("--suite", suite, "Suite size")->check(CLI::IsMember({"small", "full"}));
    verify->add_option("--seed", verify_seed, "Master seed");
    verify->add_option("--out", verify_out, "Output directory for summary.csv and per-run series");
    verify->add_option("--tolerance-override", overrides, "Replace the tolerance of every check named NAME")
        ->type_name("NAME=VALUE");
    verify->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1u, 256u));

    std::string spectrum_config, spectrum_out;
    auto* spectrum = app.add_subcommand("spectrum", "Write the eigenvalues of the domain in a config as CSV");
    spectrum->add_option("--config", spectrum_config, "Scenario JSON")->required()->check(CLI::ExistingFile);
    spectrum->add_option("--out", spectrum_out, "CSV path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            return cmd_run(config, out_dir, *run_seed ? std::optional<std::uint64_t>(seed) : std::nullopt, format);
        }
        if (*verify) {
            parafreq::SuiteOptions opts;
            opts.seed = verify_seed;
            opts.size = suite == "full" ? parafreq::SuiteSize::full : parafreq::SuiteSize::small;
            opts.out_dir = verify_out;
            opts.overrides = parse_overrides(overrides);
            opts.jobs = jobs;
            return parafreq::verify_suite(opts);
        }
        if (*spectrum) return cmd_spectrum(spectrum_config, spectrum_out);
    } catch (const std::exception& e) {
        std::cerr << "parafreq: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
