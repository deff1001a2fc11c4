// Scripted similarity endpoint speaking the one-JSON-object-per-line
// protocol on stdin/stdout. Used by the test suite and as a reference for
// bridging a real scorer.
//
//   mock_scorer                     answer every request with --similarity
//   mock_scorer --mode error        answer with an error response
//   mock_scorer --mode out-of-range answer with similarity 1.5
//   mock_scorer --mode silent       read requests, never answer
//   mock_scorer --mode wrong-id     answer with a mismatched id

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "boxrl/similarity.hpp"

int main(int argc, char** argv) {
  CLI::App app{"scripted similarity endpoint"};
  std::string mode = "ok";
  double similarity = 0.42;
  app.add_option("--mode", mode, "ok|error|out-of-range|silent|wrong-id")
      ->check(CLI::IsMember({"ok", "error", "out-of-range", "silent", "wrong-id"}));
  app.add_option("--similarity", similarity, "value returned in ok mode");
  CLI11_PARSE(app, argc, argv);

  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    boxrl::SimilarityRequest req;
    try {
      req = boxrl::parse_request(line);
    } catch (const std::exception& e) {
      std::cerr << "mock_scorer: " << e.what() << "\n";
      return 1;
    }
    if (mode == "silent") continue;

    boxrl::SimilarityResponse resp;
    resp.id = mode == "wrong-id" ? req.id + "-mismatch" : req.id;
    if (mode == "error")
      resp.error = "scripted failure";
    else if (mode == "out-of-range")
      resp.similarity = 1.5;
    else
      resp.similarity = similarity;
    std::cout << boxrl::serialize_response(resp) << "\n" << std::flush;
  }
  return 0;
}
