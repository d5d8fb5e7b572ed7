/** DOM overlay: gesture cursor, mode badge, FPS counter, error badge,
 * metadata sidebar, and the sonification mute toggle.
 */

import type { Api } from "./api.js";
import type { ViewState } from "./viewstate.js";

export class Overlay {
  private cursorEl: HTMLElement;
  private badgeEl: HTMLElement;
  private fpsEl: HTMLElement;
  private errorEl: HTMLElement;
  private sidebarEl: HTMLElement;
  private frames: number[] = [];

  constructor(root: HTMLElement, private api: Api) {
    this.cursorEl = this.el(root, "gesture-cursor");
    this.badgeEl = this.el(root, "mode-badge");
    this.fpsEl = this.el(root, "fps-counter");
    this.errorEl = this.el(root, "error-badge");
    this.sidebarEl = this.el(root, "sidebar");
  }

  private el(root: HTMLElement, id: string): HTMLElement {
    const found = root.querySelector(`#${id}`);
    if (found) {
      return found as HTMLElement;
    }
    const div = document.createElement("div");
    div.id = id;
    root.appendChild(div);
    return div;
  }

  update(state: ViewState): void {
    if (state.cursor) {
      this.cursorEl.style.display = "block";
      this.cursorEl.style.left = `${state.cursor.x * state.viewW}px`;
      this.cursorEl.style.top = `${state.cursor.y * state.viewH}px`;
    } else {
      this.cursorEl.style.display = "none";
    }
    const mode = state.dragging ? "dragging"
      : state.cursor ? "tracking" : "idle";
    this.badgeEl.textContent = mode;
    this.badgeEl.dataset.mode = mode;
  }

  /** Call once per animation frame; shows a 1-second rolling FPS. */
  tick(now: number): void {
    this.frames.push(now);
    while (this.frames.length > 2 && this.frames[0] < now - 1000) {
      this.frames.shift();
    }
    if (this.frames.length > 1) {
      const span = this.frames[this.frames.length - 1] - this.frames[0];
      const fps = ((this.frames.length - 1) / span) * 1000;
      this.fpsEl.textContent = `${fps.toFixed(0)} fps`;
    }
  }

  setError(message: string | null): void {
    this.errorEl.style.display = message ? "block" : "none";
    this.errorEl.textContent = message ?? "";
  }

  async showObject(id: string | null): Promise<void> {
    if (!id) {
      this.sidebarEl.style.display = "none";
      return;
    }
    try {
      const doc = await this.api.object(id);
      const rows = Object.entries(doc)
        .filter(([, v]) => v !== "" && !(Array.isArray(v) && v.length === 0))
        .map(([k, v]) => `<dt>${k}</dt><dd>${Array.isArray(v) ? v.join(", ") : String(v)}</dd>`)
        .join("");
      this.sidebarEl.innerHTML = `<dl>${rows}</dl>`;
      this.sidebarEl.style.display = "block";
    } catch (err) {
      this.setError(`metadata fetch failed: ${err}`);
    }
  }
}
