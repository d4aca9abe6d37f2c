#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "metasurf/dataset.hpp"
#include "metasurf/error.hpp"

#ifndef METASURF_VERSION
#define METASURF_VERSION "unknown"
#endif

using json = nlohmann::ordered_json;

int main(int argc, char** argv) {
  CLI::App app{"msds-info: print the header of a metasurf dataset file"};
  app.set_version_flag("--version", METASURF_VERSION);
  std::string file;
  bool header_only = false;
  app.add_option("file", file, ".msds file")->required()->check(CLI::ExistingFile);
  app.add_flag("--header-only", header_only, "Print the stored header JSON verbatim");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    const metasurf::DatasetFile ds = metasurf::load(file);
    if (header_only) {
      std::cout << ds.header_json << '\n';
      return 0;
    }
    json out;
    out["file"] = file;
    out["class"] = std::string(metasurf::to_string(ds.cls));
    out["records"] = ds.size();
    out["content_fingerprint"] = metasurf::content_fingerprint_hex(ds);
    out["solver_fingerprint"] = metasurf::fingerprint_hex(ds.solver());
    out["header"] = json::parse(ds.header_json);
    std::cout << out.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
