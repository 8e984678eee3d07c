// Message transports. The browser talks WebSocket (graspsim serve --ws);
// tests in node talk the canonical NDJSON/TCP protocol directly.

import type { ClientMessage, ServerMessage } from "./protocol";

export interface Transport {
  send(msg: ClientMessage): void;
  close(): void;
  onMessage(handler: (msg: ServerMessage, atMs: number) => void): void;
  onOpen(handler: () => void): void;
  onClose(handler: () => void): void;
}

export class WebSocketTransport implements Transport {
  private ws: WebSocket;
  private messageHandler: ((msg: ServerMessage, atMs: number) => void) | null = null;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onmessage = (ev) => {
      if (this.messageHandler) {
        this.messageHandler(JSON.parse(ev.data as string) as ServerMessage, Date.now());
      }
    };
  }

  send(msg: ClientMessage): void {
    this.ws.send(JSON.stringify(msg));
  }

  close(): void {
    this.ws.close();
  }

  onMessage(handler: (msg: ServerMessage, atMs: number) => void): void {
    this.messageHandler = handler;
  }

  onOpen(handler: () => void): void {
    this.ws.addEventListener("open", handler);
  }

  onClose(handler: () => void): void {
    this.ws.addEventListener("close", handler);
  }
}

/** Node-only NDJSON/TCP client used by the integration tests. */
export class TcpTransport implements Transport {
  private sock: import("node:net").Socket;
  private buffer = "";
  private messageHandler: ((msg: ServerMessage, atMs: number) => void) | null = null;

  private constructor(sock: import("node:net").Socket) {
    this.sock = sock;
    sock.setEncoding("utf8");
    sock.on("data", (chunk: string) => {
      this.buffer += chunk;
      let idx: number;
      while ((idx = this.buffer.indexOf("\n")) >= 0) {
        const line = this.buffer.slice(0, idx);
        this.buffer = this.buffer.slice(idx + 1);
        if (line.trim() && this.messageHandler) {
          this.messageHandler(JSON.parse(line) as ServerMessage, Date.now());
        }
      }
    });
  }

  static async connect(host: string, port: number): Promise<TcpTransport> {
    const net = await import("node:net");
    return new Promise((resolve, reject) => {
      const sock = net.createConnection({ host, port }, () => resolve(new TcpTransport(sock)));
      sock.once("error", reject);
    });
  }

  send(msg: ClientMessage): void {
    this.sock.write(JSON.stringify(msg) + "\n");
  }

  close(): void {
    this.sock.end();
    this.sock.destroy();
  }

  onMessage(handler: (msg: ServerMessage, atMs: number) => void): void {
    this.messageHandler = handler;
  }

  onOpen(handler: () => void): void {
    this.sock.on("connect", handler);
  }

  onClose(handler: () => void): void {
    this.sock.on("close", handler);
  }
}
