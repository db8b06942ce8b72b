import { ApiError, StudioApi } from './api.js';
import type { InterpolateRequest } from './types.js';

// The alpha strip rendered by the sweep button, left to right.
export const SWEEP_ALPHAS: readonly number[] = [1.0, 0.8, 0.6, 0.4, 0.2, 0.0];

export const SLIDER_DEBOUNCE_MS = 150;

export type InterpolationBase = Omit<InterpolateRequest, 'alphas'>;

export interface InterpolationCallbacks {
    onFrame(image: string, alpha: number): void;
    onStrip?(images: string[]): void;
    onError?(message: string): void;
}

/** Drives /interpolate from the slider.  Drag events are debounced, and every
 * request gets a sequence number; a response is rendered only if it belongs to
 * the most recently issued request, so slow responses from earlier slider
 * positions never overwrite newer ones (last write wins). */
export class InterpolationController {
    private api: StudioApi;
    private callbacks: InterpolationCallbacks;
    private debounceMs: number;
    private seq = 0;
    private timer: ReturnType<typeof setTimeout> | null = null;

    constructor(api: StudioApi, callbacks: InterpolationCallbacks, debounceMs: number = SLIDER_DEBOUNCE_MS) {
        this.api = api;
        this.callbacks = callbacks;
        this.debounceMs = debounceMs;
    }

    /** Called on every slider input event. */
    setAlpha(base: InterpolationBase, alpha: number): void {
        if (this.timer !== null) {
            clearTimeout(this.timer);
        }
        this.timer = setTimeout(() => {
            this.timer = null;
            void this.requestFrame(base, alpha);
        }, this.debounceMs);
    }

    private async requestFrame(base: InterpolationBase, alpha: number): Promise<void> {
        const ticket = ++this.seq;
        try {
            const res = await this.api.interpolate({ ...base, alphas: [alpha] });
            if (ticket !== this.seq) {
                return; // a newer slider position was requested meanwhile
            }
            this.callbacks.onFrame(res.images[0], alpha);
        } catch (err) {
            if (ticket !== this.seq) {
                return;
            }
            this.callbacks.onError?.(err instanceof ApiError ? err.detail : String(err));
        }
    }

    /** Render the full six-frame strip in one request. */
    async sweep(base: InterpolationBase): Promise<void> {
        try {
            const res = await this.api.interpolate({ ...base, alphas: [...SWEEP_ALPHAS] });
            this.callbacks.onStrip?.(res.images);
        } catch (err) {
            this.callbacks.onError?.(err instanceof ApiError ? err.detail : String(err));
        }
    }
}
