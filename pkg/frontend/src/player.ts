// Playback abstraction so the session logic is testable without a browser.
// play() resolves when the clip has been heard to the end; the controller
// counts a side as "played" only then.

export interface AudioPlayer {
  play(url: string): Promise<void>;
  stop(): void;
}

export class HtmlAudioPlayer implements AudioPlayer {
  private element: HTMLAudioElement | null = null;

  play(url: string): Promise<void> {
    this.stop();
    const element = new Audio(url);
    this.element = element;
    return new Promise((resolve, reject) => {
      element.addEventListener("ended", () => resolve(), { once: true });
      element.addEventListener("error", () => reject(new Error(`playback failed: ${url}`)), {
        once: true,
      });
      void element.play().catch(reject);
    });
  }

  stop(): void {
    if (this.element) {
      this.element.pause();
      this.element.currentTime = 0;
      this.element = null;
    }
  }
}
