#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridest/io.hpp"

namespace gridest::io {

pf::ProfileSet read_profiles_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open profiles file '" + path + "'");
    pf::ProfileSet out;
    std::string line;
    int lineno = 0;
    bool header = false;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream in(line);
        std::string cell;
        std::vector<std::string> cols;
        while (std::getline(in, cell, ',')) cols.push_back(cell);
        if (!header) {
            if (cols.size() != 4 || cols[0] != "period" || cols[1] != "element" ||
                cols[2] != "p_scale" || cols[3] != "q_scale")
                throw InputError(path + ": line " + std::to_string(lineno) +
                                 ": expected header period,element,p_scale,q_scale");
            header = true;
            continue;
        }
        if (cols.size() != 4)
            throw InputError(path + ": line " + std::to_string(lineno) + ": expected 4 columns");
        try {
            int period = std::stoi(cols[0]);
            auto& series = out[cols[1]];
            if (static_cast<int>(series.size()) <= period) series.resize(period + 1, {1.0, 1.0});
            series[period] = {std::stod(cols[2]), std::stod(cols[3])};
        } catch (const InputError&) {
            throw;
        } catch (...) {
            throw InputError(path + ": line " + std::to_string(lineno) + ": bad value");
        }
    }
    if (!header) throw InputError(path + ": profiles file has no header row");
    return out;
}

std::string write_profiles_csv(const pf::ProfileSet& profiles, int periods) {
    std::string out = "period,element,p_scale,q_scale\n";
    char buf[256];
    for (const auto& [element, series] : profiles) {
        for (int t = 0; t < periods && t < static_cast<int>(series.size()); ++t) {
            std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g\n", t, element.c_str(),
                          series[t].p_scale, series[t].q_scale);
            out += buf;
        }
    }
    return out;
}

void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("cannot write '" + tmp + "'");
        f << content;
        if (!f.good()) throw InputError("write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

} // namespace gridest::io
