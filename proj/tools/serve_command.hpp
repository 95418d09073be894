#pragma once

#include <iostream>

#include "cli_common.hpp"
#include "ibts/session/server.hpp"

namespace ibts::cli {

// serve --port <p> --checkpoint-dir <dir> [--config sessions.json]
// The optional config is a JSON array of create requests opened at startup.
inline int serve_command(const CommonFlags& f, const std::string& host, int port, const std::string& checkpoint_dir,
                         double step_timeout) {
  if (!checkpoint_dir.empty() && !std::filesystem::is_directory(checkpoint_dir)) {
    throw Error("cli.missing_checkpoint", "checkpoint directory not found: " + checkpoint_dir);
  }
  const auto out = prepare_out(f);
  session::SessionManager manager(out / "replays", checkpoint_dir);
  nlohmann::json preset = nlohmann::json::array();
  if (!f.config.empty()) {
    preset = read_json_file(f.config);
    if (!preset.is_array()) throw Error("config.malformed", "serve config must be an array of session create requests");
    for (const auto& req : preset) manager.create(req.get<session::CreateRequest>());
  }
  session::asio::io_context ioc(1);
  session::WebSocketServer server(ioc, {session::asio::ip::make_address(host), static_cast<unsigned short>(port)}, manager,
                                  step_timeout);
  server.start();
  write_manifest(out, "serve", {{"host", host}, {"port", server.port()}, {"checkpoint_dir", checkpoint_dir}, {"step_timeout", step_timeout}, {"sessions", preset}},
                 nlohmann::json::array(), {{"checkpoint_dir", checkpoint_dir}});
  std::cout << nlohmann::json{{"listening", host + ":" + std::to_string(server.port())}}.dump() << std::endl;
  session::asio::signal_set signals(ioc, SIGINT, SIGTERM);
  signals.async_wait([&](auto, int) {
    for (auto* s : manager.sessions()) s->stop();
    server.shutdown();
    ioc.stop();
  });
  ioc.run();
  return 0;
}

}  // namespace ibts::cli
