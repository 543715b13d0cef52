/**
 * gen/1 backend server over stdio: one JSON request per input line, one
 * JSON reply per output line. Malformed or invalid requests produce
 * {status:"error"} replies without terminating the session; the process
 * exits when stdin closes.
 */

import { createInterface } from "node:readline";

import { BackendSession } from "./protocol.js";

export function serveStdio(): void {
  const session = new BackendSession();
  const rl = createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (line.trim() === "") {
      return;
    }
    process.stdout.write(JSON.stringify(session.handleLine(line)) + "\n");
  });
}

serveStdio();
