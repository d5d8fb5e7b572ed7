/** Sonification playback: a single oscillator whose pitch/gain follow the
 * parameters arriving on the event feed. Muted by default.
 */

import type { SonifyParams } from "./types.js";

export class Sonifier {
  private ctx: AudioContext | null = null;
  private osc: OscillatorNode | null = null;
  private gainNode: GainNode | null = null;
  muted = true;

  toggle(): boolean {
    this.muted = !this.muted;
    if (this.muted) {
      this.stop();
    }
    return this.muted;
  }

  apply(params: SonifyParams): void {
    if (this.muted) {
      return;
    }
    if (!this.ctx) {
      this.ctx = new AudioContext();
      this.osc = this.ctx.createOscillator();
      this.gainNode = this.ctx.createGain();
      this.gainNode.gain.value = 0;
      this.osc.type = "sine";
      this.osc.connect(this.gainNode).connect(this.ctx.destination);
      this.osc.start();
    }
    const now = this.ctx.currentTime;
    // pitch in [0,1] -> 180..900 Hz; texture picks the waveform
    this.osc!.frequency.linearRampToValueAtTime(180 + params.pitch * 720, now + 0.05);
    this.gainNode!.gain.linearRampToValueAtTime(
      Math.min(Math.max(params.gain, 0), 1) * 0.2, now + 0.05);
    const shapes: OscillatorType[] = ["sine", "triangle", "square"];
    this.osc!.type = shapes[Math.min(Math.max(Math.trunc(params.texture), 0), 2)];
  }

  private stop(): void {
    if (this.gainNode && this.ctx) {
      this.gainNode.gain.linearRampToValueAtTime(0, this.ctx.currentTime + 0.1);
    }
  }
}
