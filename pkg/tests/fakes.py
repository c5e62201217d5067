"""Scripted fake sinks for exercising the fan-out and gateway stacks."""

from __future__ import annotations

import json
import socketserver
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class FakeHttpGateway:
    """Records JSON POSTs; can be scripted to fail the first N requests."""

    def __init__(self):
        self.requests: list[tuple[str, dict]] = []
        self.fail_times = 0
        self.delay_s = 0.0
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with outer._lock:
                    outer.requests.append((self.path, body))
                    fail = outer.fail_times > 0
                    if fail:
                        outer.fail_times -= 1
                if outer.delay_s:
                    import time

                    time.sleep(outer.delay_s)
                self.send_response(500 if fail else 200)
                self.send_header("Content-Length", "2")
                self.end_headers()
                self.wfile.write(b"{}")

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.port = self._server.server_port
        self.url = f"http://127.0.0.1:{self.port}"
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self._server.shutdown()
        self._server.server_close()


class FakeSmtpServer:
    """Minimal RFC 5321 conversation: EHLO/HELO, MAIL, RCPT, DATA, QUIT."""

    def __init__(self):
        self.messages: list[dict] = []
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                def send(line: str):
                    self.wfile.write((line + "\r\n").encode())

                send("220 fake-smtp ready")
                sender, recipients = "", []
                while True:
                    raw = self.rfile.readline()
                    if not raw:
                        return
                    line = raw.decode(errors="replace").strip()
                    verb = line.split(":", 1)[0].split(" ", 1)[0].upper()
                    if verb in ("EHLO", "HELO"):
                        send("250 fake-smtp")
                    elif line.upper().startswith("MAIL FROM"):
                        sender = line.split(":", 1)[1].strip().strip("<>")
                        send("250 OK")
                    elif line.upper().startswith("RCPT TO"):
                        recipients.append(line.split(":", 1)[1].strip().strip("<>"))
                        send("250 OK")
                    elif verb == "DATA":
                        send("354 end with <CRLF>.<CRLF>")
                        lines = []
                        while True:
                            dl = self.rfile.readline().decode(errors="replace")
                            if dl.rstrip("\r\n") == ".":
                                break
                            lines.append(dl.rstrip("\r\n"))
                        outer.messages.append(
                            {"from": sender, "to": list(recipients), "data": "\n".join(lines)}
                        )
                        sender, recipients = "", []
                        send("250 accepted")
                    elif verb == "QUIT":
                        send("221 bye")
                        return
                    elif verb in ("RSET", "NOOP"):
                        send("250 OK")
                    else:
                        send("502 not implemented")

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server(("127.0.0.1", 0), Handler)
        self.port = self._server.server_address[1]
        self.endpoint = f"127.0.0.1:{self.port}"
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self._server.shutdown()
        self._server.server_close()


def free_port() -> int:
    """A port nothing is listening on (for connection-refused scenarios)."""
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
