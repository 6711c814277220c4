// Serves a scripted stub as a chat-completion endpoint on 127.0.0.1.
//   stub_server --script fixtures/exam/examiner.json --port 8089

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lmexam/stub_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"scripted chat-completion server"};
  std::string script;
  int port = 8089;
  app.add_option("--script", script)->required();
  app.add_option("--port", port);
  CLI11_PARSE(app, argc, argv);
  try {
    lmexam::StubServer server(lmexam::ScriptedStub::from_file(script));
    std::cout << "serving http://127.0.0.1:" << port << "/v1/chat/completions\n" << std::flush;
    server.serve(port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
