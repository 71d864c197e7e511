#pragma once

#include <iosfwd>

namespace sveb::cli {

/// Full command-line entry point; returns the process exit code.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sveb::cli
