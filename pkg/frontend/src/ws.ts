/** Websocket event feed with automatic reconnect. */

import { parseTraceLine } from "./events.js";
import type { InterfaceEvent } from "./types.js";

export function connectEvents(
  onEvent: (ev: InterfaceEvent) => void,
  onStatus: (connected: boolean) => void,
): void {
  let backoff = 500;

  const open = () => {
    const proto = location.protocol === "https:" ? "wss" : "ws";
    const ws = new WebSocket(`${proto}://${location.host}/ws/events`);
    ws.onopen = () => {
      backoff = 500;
      onStatus(true);
    };
    ws.onmessage = (msg) => {
      const ev = parseTraceLine(String(msg.data));
      if (ev) {
        onEvent(ev);
      }
    };
    ws.onclose = () => {
      onStatus(false);
      setTimeout(open, backoff);
      backoff = Math.min(backoff * 2, 10_000);
    };
    ws.onerror = () => ws.close();
  };
  open();
}
