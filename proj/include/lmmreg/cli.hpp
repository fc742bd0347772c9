#ifndef LMMREG_CLI_HPP
#define LMMREG_CLI_HPP

namespace lmmreg {

/// Entry point for the `lmmreg` tool (register | synth | eval | bench).
/// Exit codes: 0 success, 2 ran-but-did-not-converge, 1 hard error.
int cli_main(int argc, const char* const* argv);

}  // namespace lmmreg

#endif
